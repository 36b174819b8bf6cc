import numpy as np
import pytest

from stocg.errors import ContractViolation
from stocg.icg import IcgRequest, exact_subproblem_solution, run_icg, subproblem_value
from stocg.sets import FeasibleSet

SETS = [FeasibleSet.l1_ball(6, 1.0), FeasibleSet.l2_ball(6, 1.5),
        FeasibleSet.simplex(6, 1.0), FeasibleSet.box(6, -1.0, 2.0)]


def random_instance(fs, rng):
    x = fs.sample(rng, 1)[0]
    z = 3 * rng.standard_normal(fs.dim)
    beta = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
    return x, z, beta


class TestSubproblemValue:
    def test_center_is_zero(self):
        req = IcgRequest(np.ones(2), np.array([1.0, 2.0]), 1.0, 1)
        assert subproblem_value(req, np.ones(2)) == 0.0

    def test_zero_z(self):
        req = IcgRequest(np.zeros(2), np.zeros(2), 3.0, 1)
        assert subproblem_value(req, np.array([1.0, 1.0])) == pytest.approx(3.0)

    def test_hand_value(self):
        req = IcgRequest(np.zeros(2), np.array([1.0, 0.0]), 2.0, 1)
        assert subproblem_value(req, np.array([1.0, 1.0])) == 3.0


class TestExactSolution:
    def test_zero_z(self):
        x = np.array([0.2, 0.1])
        np.testing.assert_array_equal(exact_subproblem_solution(FeasibleSet.l2_ball(2), x, np.zeros(2), 1.0), x)

    def test_interior(self):
        fs = FeasibleSet.box(2, -100.0, 100.0)
        x, z = np.array([1.0, 2.0]), np.array([0.5, -1.0])
        np.testing.assert_allclose(exact_subproblem_solution(fs, x, z, 2.0), x - z / 2.0)

    def test_l1(self):
        y = exact_subproblem_solution(FeasibleSet.l1_ball(2), np.zeros(2), np.array([-3.0, 0.0]), 1.0)
        np.testing.assert_array_equal(y, [1.0, 0.0])


class TestRunIcg:
    def test_zero_budget(self):
        x = np.array([0.1, 0.2])
        res = run_icg(FeasibleSet.l2_ball(2), IcgRequest(x, np.ones(2), 1.0, 0))
        np.testing.assert_array_equal(res.w, x)
        assert res.lmo_calls == 0

    def test_zero_z_returns_center(self):
        x = np.array([0.1, 0.2, 0.3])
        res = run_icg(FeasibleSet.simplex(3, 0.6), IcgRequest(x, np.zeros(3), 1.0, 10))
        np.testing.assert_array_equal(res.w, x)
        assert res.lmo_calls <= 10

    def test_l1_bound_example(self):
        fs = FeasibleSet.l1_ball(2, 1.0)
        req = IcgRequest(np.zeros(2), np.array([-1.0, 0.0]), 1.0, 50)
        res = run_icg(fs, req)
        y_star = fs.project(req.x - req.z / req.beta)
        gap = subproblem_value(req, res.w) - subproblem_value(req, y_star)
        assert gap <= 2 * req.beta * fs.diameter ** 2 / 52

    def test_counts_calls(self):
        fs = FeasibleSet.l2_ball(5, 1.0)
        rng = np.random.default_rng(0)
        res = run_icg(fs, IcgRequest(np.zeros(5), rng.standard_normal(5) * 10, 1.0, 7))
        assert res.lmo_calls <= 7

    @pytest.mark.parametrize("fs", SETS, ids=lambda s: s.kind)
    def test_monotone_and_feasible(self, fs):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x, z, beta = random_instance(fs, rng)
            req = IcgRequest(x, z, beta, 40)
            res, hist = run_icg(fs, req, return_history=True)
            vals = [subproblem_value(req, w) for w in hist]
            assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
            assert all(fs.contains(w) for w in hist)
            assert fs.contains(res.w)

    @pytest.mark.parametrize("fs", SETS, ids=lambda s: s.kind)
    def test_adversarial_slack_bound(self, fs):
        rng = np.random.default_rng(2)
        delta = 0.5
        for _ in range(20):
            x, z, beta = random_instance(fs, rng)
            y_star = exact_subproblem_solution(fs, x, z, beta)
            for t in (1, 4, 16, 64):
                req = IcgRequest(x, z, beta, t, delta)
                w = run_icg(fs, req, adversarial=True).w
                gap = subproblem_value(req, w) - subproblem_value(req, y_star)
                assert gap <= 2 * beta * fs.diameter ** 2 * (1 + delta) / (t + 2) + 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            IcgRequest(np.zeros(2), np.zeros(3), 1.0, 1)

    @pytest.mark.parametrize("beta,budget,slack", [(0.0, 1, 0.0), (1.0, -1, 0.0), (1.0, 1.5, 0.0),
                                                   (1.0, 1, -0.1)])
    def test_bad_request(self, beta, budget, slack):
        with pytest.raises(ContractViolation):
            IcgRequest(np.zeros(2), np.zeros(2), beta, budget, slack)
