import numpy as np
import pytest

from stocg.benchmarks import REGISTRY, make_benchmark
from stocg.composition import (CompositionProblem, NoiseModel, SmoothMap, StochasticOracle,
                               chain_product, chain_sample, exact_gradient, exact_value,
                               finite_difference_jacobian, inner_values, sample_level)
from stocg.errors import ConfigError, ContractViolation, NumericalDomainError


def linear_map(M, b=None, name=""):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    b = np.zeros(M.shape[0]) if b is None else np.asarray(b, dtype=float)
    return SmoothMap(M.shape[1], M.shape[0], lambda y: M @ y + b, lambda y: M,
                     lip_value=float(np.linalg.norm(M, 2)), lip_grad=0.0, name=name)


def sq_norm(dim, half=False):
    c = 0.5 if half else 1.0
    return SmoothMap(dim, 1, lambda y: np.array([c * y @ y]), lambda y: (2 * c * y)[None, :],
                     lip_grad=2 * c)


def random_stack(rng, dims=(4, 3, 2)):
    """T = 3 stack with tanh nonlinearities: d=4 -> 3 -> 2 -> 1."""
    d, m2, m1 = dims
    A3 = rng.standard_normal((m2, d))
    A2 = rng.standard_normal((m1, m2))
    c = rng.standard_normal(m1)
    f3 = SmoothMap(d, m2, lambda x: np.tanh(A3 @ x), lambda x: (1 - np.tanh(A3 @ x) ** 2)[:, None] * A3)
    f2 = SmoothMap(m2, m1, lambda y: np.sin(A2 @ y), lambda y: np.cos(A2 @ y)[:, None] * A2)
    f1 = SmoothMap(m1, 1, lambda y: np.array([c @ y + 0.5 * y @ y]), lambda y: (c + y)[None, :])
    return CompositionProblem((f1, f2, f3))


class TestProblem:
    def test_dimension_chain(self):
        p = random_stack(np.random.default_rng(0))
        assert p.T == 3
        assert p.dim == 4
        assert p.dims == (4, 3, 2, 1)

    def test_rejects_broken_chain(self):
        with pytest.raises(ConfigError):
            CompositionProblem((sq_norm(2), linear_map(np.eye(3))))

    def test_rejects_vector_outer_level(self):
        with pytest.raises(ConfigError):
            CompositionProblem((linear_map(np.eye(2)),))

    def test_level_index_out_of_range(self):
        p = CompositionProblem((sq_norm(2),))
        with pytest.raises(ContractViolation):
            p.level(2)


class TestExact:
    def test_identity_inner_squared_norm(self):
        p = CompositionProblem((sq_norm(2), linear_map(np.eye(2))))
        assert exact_value(p, [1.0, 1.0]) == 2.0

    def test_linear_one_level(self):
        p = CompositionProblem((linear_map([[1.0, 2.0]]),))
        assert exact_value(p, [3.0, 4.0]) == 11.0

    def test_gradient_squared_norm(self):
        p = CompositionProblem((sq_norm(2),))
        np.testing.assert_array_equal(exact_gradient(p, [1.0, 2.0]), [2.0, 4.0])

    def test_gradient_linear_inner(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((3, 5))
        x = rng.standard_normal(5)
        p = CompositionProblem((sq_norm(3, half=True), linear_map(A)))
        np.testing.assert_allclose(exact_gradient(p, x), A.T @ A @ x, rtol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        p = random_stack(rng)
        for _ in range(10):
            x = rng.standard_normal(4)
            g = exact_gradient(p, x)
            fd = np.array([(exact_value(p, x + 1e-6 * e) - exact_value(p, x - 1e-6 * e)) / 2e-6
                           for e in np.eye(4)])
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))

    def test_inner_values_order(self):
        p = random_stack(np.random.default_rng(3))
        x = np.ones(4)
        pts = inner_values(p, x)
        assert [v.shape for v in pts] == [(2,), (3,), (4,)]
        np.testing.assert_array_equal(pts[1], p.level(3).value(x))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_names_level(self):
        bad = SmoothMap(1, 1, lambda y: np.array([np.log(y[0])]), lambda y: np.array([[1 / y[0]]]))
        p = CompositionProblem((sq_norm(1), bad))
        with pytest.raises(NumericalDomainError) as info:
            exact_value(p, [-1.0])
        assert info.value.level == 2

    def test_wrong_dimension(self):
        p = CompositionProblem((sq_norm(2),))
        with pytest.raises(ContractViolation):
            exact_value(p, [1.0, 2.0, 3.0])


class TestNoiseModel:
    def test_none_forces_zero(self):
        nm = NoiseModel("none", (1.0, 2.0), (3.0,))
        assert nm.sigma_value == (0.0, 0.0)
        assert nm.sigma_jacobian == (0.0,)

    def test_gaussian_broadcast(self):
        nm = NoiseModel.gaussian(3, 0.5, [0.1, 0.2, 0.3])
        assert nm.sigmas(2) == (0.5, 0.2)

    def test_rejects_negative(self):
        with pytest.raises(ConfigError):
            NoiseModel("gaussian_additive", (-1.0,), (0.0,))

    def test_rejects_unknown_kind(self):
        with pytest.raises(ConfigError):
            NoiseModel("laplace")


class TestOracle:
    def test_zero_noise_passthrough(self):
        f = linear_map([[2.0]])
        p = CompositionProblem((f,))
        G, J = sample_level(StochasticOracle(p), 1, [3.0])
        np.testing.assert_array_equal(G, [6.0])
        np.testing.assert_array_equal(J, [[2.0]])

    def test_jacobian_is_transposed(self):
        M = np.arange(6.0).reshape(3, 2)
        p = CompositionProblem((sq_norm(3), linear_map(M)))
        _, J = StochasticOracle(p).sample_level(2, np.ones(2))
        assert J.shape == (2, 3)
        np.testing.assert_array_equal(J, M.T)

    def test_dimension_mismatch(self):
        f = linear_map(np.ones((3, 2)))
        p = CompositionProblem((sq_norm(3), f))
        with pytest.raises(ContractViolation):
            StochasticOracle(p).sample_level(2, np.ones(3))

    def test_unbiased_value_clt_band(self):
        p = CompositionProblem((linear_map([[1.0]]),))
        oracle = StochasticOracle(p, NoiseModel.gaussian(1, 1.0, 0.0), seed=11)
        draws = np.array([oracle.sample_value(1, [0.0])[0] for _ in range(10_000)])
        assert abs(draws.mean()) <= 0.04

    def test_streams_independent_of_other_kind(self):
        # drawing Jacobians must not shift the value stream
        p = CompositionProblem((linear_map([[1.0, 1.0]]),))
        noise = NoiseModel.gaussian(1, 1.0, 1.0)
        a, b = StochasticOracle(p, noise, 5), StochasticOracle(p, noise, 5)
        for _ in range(3):
            b.sample_jacobian(1, np.zeros(2))
        np.testing.assert_array_equal(a.sample_value(1, np.zeros(2)), b.sample_value(1, np.zeros(2)))

    def test_clone_reproduces(self):
        p = CompositionProblem((sq_norm(2),))
        o = StochasticOracle(p, NoiseModel.gaussian(1, 1.0, 1.0), 3)
        c1, c2 = o.clone(9), o.clone(9)
        np.testing.assert_array_equal(c1.sample_jacobian(1, np.ones(2)), c2.sample_jacobian(1, np.ones(2)))

    def test_native_requires_samplers(self):
        p = CompositionProblem((sq_norm(2),))
        with pytest.raises(ConfigError):
            StochasticOracle(p, NoiseModel("native"))


class TestChain:
    def test_identity_inner_matches_gradient(self):
        p = CompositionProblem((sq_norm(2), linear_map(np.eye(2))))
        x = np.array([0.3, -1.2])
        _, prod = chain_sample(StochasticOracle(p), inner_values(p, x))
        np.testing.assert_array_equal(prod, exact_gradient(p, x))

    def test_three_level_chain_rule_exact(self):
        rng = np.random.default_rng(4)
        p = random_stack(rng)
        x = rng.standard_normal(4)
        samples, prod = chain_sample(StochasticOracle(p), inner_values(p, x))
        assert len(samples) == 3
        np.testing.assert_array_equal(prod, exact_gradient(p, x))

    def test_chain_product_shapes(self):
        J1 = np.ones((2, 1))
        J2 = np.ones((3, 2))
        np.testing.assert_array_equal(chain_product([J1, J2]), [2.0, 2.0, 2.0])

    def test_wrong_number_of_points(self):
        p = random_stack(np.random.default_rng(0))
        with pytest.raises(ContractViolation):
            chain_sample(StochasticOracle(p), [np.zeros(2)])

    def test_noisy_product_mean(self):
        # with independent levels the mean product equals the product of mean Jacobians
        rng = np.random.default_rng(5)
        A = rng.standard_normal((2, 3))
        p = CompositionProblem((linear_map([[1.0, -2.0]]), linear_map(A)))
        oracle = StochasticOracle(p, NoiseModel.gaussian(2, 0.0, 0.5), seed=6)
        pts = inner_values(p, np.ones(3))
        prods = np.array([chain_sample(oracle, pts)[1] for _ in range(10_000)])
        target = A.T @ np.array([1.0, -2.0])
        se = prods.std(axis=0, ddof=1) / 100
        assert np.all(np.abs(prods.mean(axis=0) - target) <= 3.92 * se)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_benchmark_jacobians_match_finite_differences(name):
    bench = make_benchmark(name, seed=0)
    feasible = bench.feasible_set()
    rng = np.random.default_rng(7)
    problem = bench.problem
    for x in feasible.sample(rng, 20):
        for i, y in enumerate(inner_values(problem, x), start=1):
            f = problem.level(i)
            jac = np.asarray(f.jacobian(y), dtype=float).reshape(f.out_dim, f.in_dim)
            fd = finite_difference_jacobian(f, y, 1e-6)
            scale = max(1.0, np.abs(jac).max())
            assert np.abs(jac - fd).max() <= 1e-5 * scale, (name, i)
