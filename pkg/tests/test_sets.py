import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stocg.errors import ContractViolation
from stocg.sets import FeasibleSet

KIND_SETS = {
    "l1": FeasibleSet.l1_ball(4, 1.5),
    "l2": FeasibleSet.l2_ball(4, 2.0),
    "simplex": FeasibleSet.simplex(4, 1.0),
    "box": FeasibleSet.box(4, [-1.0, 0.0, -2.0, 0.5], [1.0, 1.0, 0.0, 3.0]),
}


def vertices(fs):
    d = fs.dim
    if fs.kind == "l1_ball":
        return [s * fs.radius * e for e in np.eye(d) for s in (1, -1)]
    if fs.kind == "simplex":
        return list(fs.radius * np.eye(d))
    return [np.where(np.array(bits), fs.hi, fs.lo) for bits in itertools.product([0, 1], repeat=d)]


finite_vec = arrays(np.float64, 4, elements=st.floats(-1e3, 1e3, allow_nan=False))


class TestLmo:
    def test_l1_vertex(self):
        np.testing.assert_array_equal(FeasibleSet.l1_ball(2, 1.0).lmo([3.0, -1.0]), [-1.0, 0.0])

    def test_simplex_vertex(self):
        np.testing.assert_array_equal(FeasibleSet.simplex(3, 1.0).lmo([0.5, 0.2, 0.9]), [0.0, 1.0, 0.0])

    def test_l2_direction_beats_random_points(self):
        fs = FeasibleSet.l2_ball(5, 2.0)
        rng = np.random.default_rng(0)
        g = rng.standard_normal(5)
        v = fs.lmo(g)
        np.testing.assert_allclose(v, -2 * g / np.linalg.norm(g))
        pts = fs.sample(rng, 100_000)
        assert g @ v <= (pts @ g).min() + 1e-12

    def test_l1_tie_lowest_index(self):
        np.testing.assert_array_equal(FeasibleSet.l1_ball(3, 1.0).lmo([1.0, -1.0, 1.0]), [-1.0, 0.0, 0.0])

    @pytest.mark.parametrize("name", sorted(KIND_SETS))
    def test_zero_gradient_canonical_point(self, name):
        fs = KIND_SETS[name]
        np.testing.assert_array_equal(fs.lmo(np.zeros(fs.dim)), fs.canonical_point())

    def test_box_zero_coordinate_uses_center(self):
        fs = FeasibleSet.box(2, 0.0, 1.0)
        np.testing.assert_array_equal(fs.lmo([1.0, 0.0]), [0.0, 0.5])

    def test_rejects_non_finite(self):
        with pytest.raises(ContractViolation):
            FeasibleSet.l2_ball(2).lmo([np.nan, 0.0])

    def test_rejects_wrong_shape(self):
        with pytest.raises(ContractViolation):
            FeasibleSet.l2_ball(2).lmo([1.0, 0.0, 0.0])

    @pytest.mark.parametrize("name", sorted(KIND_SETS))
    def test_optimal_against_samples_and_vertices(self, name):
        fs = KIND_SETS[name]
        rng = np.random.default_rng(1)
        pts = fs.sample(rng, 10_000)
        verts = np.array(vertices(fs)) if fs.kind != "l2_ball" else np.empty((0, fs.dim))
        for _ in range(100):
            g = rng.standard_normal(fs.dim)
            best = g @ fs.lmo(g)
            assert best <= (pts @ g).min() + 1e-9
            if len(verts):
                assert best <= (verts @ g).min() + 1e-9

    @pytest.mark.parametrize("name", sorted(KIND_SETS))
    def test_diameter_sound(self, name):
        fs = KIND_SETS[name]
        rng = np.random.default_rng(2)
        for _ in range(200):
            g = rng.standard_normal(fs.dim)
            assert np.linalg.norm(fs.lmo(g) - fs.lmo(-g)) <= fs.diameter + 1e-12
        pts = fs.sample(rng, 300)
        diffs = pts[:, None, :] - pts[None, :, :]
        assert np.sqrt((diffs ** 2).sum(-1)).max() <= fs.diameter + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(finite_vec)
    def test_lmo_feasible(self, g):
        for fs in KIND_SETS.values():
            assert fs.contains(fs.lmo(g))


class TestLmoApprox:
    @pytest.mark.parametrize("name", sorted(KIND_SETS))
    def test_zero_slack_is_exact(self, name):
        fs = KIND_SETS[name]
        rng = np.random.default_rng(3)
        for _ in range(50):
            g = rng.standard_normal(fs.dim)
            np.testing.assert_array_equal(fs.lmo_approx(g, 0.0, adversarial=True), fs.lmo(g))

    def test_large_slack_gap_bounded(self):
        fs = FeasibleSet.l1_ball(2, 1.0)
        g = np.array([1.0, 0.0])
        v = fs.lmo_approx(g, 10.0, adversarial=True)
        assert fs.contains(v)
        assert g @ v - g @ fs.lmo(g) <= 10.0

    def test_adversarial_simplex_within_slack(self):
        fs = FeasibleSet.simplex(5, 1.0)
        rng = np.random.default_rng(4)
        for _ in range(100):
            g = rng.standard_normal(5)
            v = fs.lmo_approx(g, 0.1, adversarial=True)
            gap = g @ v - g @ fs.lmo(g)
            assert -1e-12 <= gap <= 0.1 + 1e-12
            assert fs.contains(v)

    def test_negative_slack_rejected(self):
        with pytest.raises(ContractViolation):
            FeasibleSet.simplex(2).lmo_approx([1.0, 0.0], -1.0)


def l1_grid_projection(y, radius, n=2001):
    """Dense polar grid over the 2-D l1 ball."""
    best, best_d = None, np.inf
    for t in np.linspace(-radius, radius, n):
        rest = radius - abs(t)
        for s in np.linspace(-rest, rest, 41):
            v = np.array([t, s])
            dist = np.sum((v - y) ** 2)
            if dist < best_d:
                best, best_d = v, dist
    return best


class TestProject:
    @pytest.mark.parametrize("name", sorted(KIND_SETS))
    def test_idempotent_on_members(self, name):
        fs = KIND_SETS[name]
        for v in fs.sample(np.random.default_rng(5), 50):
            np.testing.assert_allclose(fs.project(v), v, atol=1e-12)

    def test_box_clamp(self):
        fs = FeasibleSet.box(3, 0.0, 1.0)
        np.testing.assert_array_equal(fs.project([-0.5, 0.4, 3.0]), [0.0, 0.4, 1.0])

    def test_l1_against_grid(self):
        fs = FeasibleSet.l1_ball(2, 1.0)
        p = fs.project([1.0, 0.2])
        np.testing.assert_allclose(p, [0.9, 0.1], atol=1e-12)
        np.testing.assert_allclose(p, l1_grid_projection(np.array([1.0, 0.2]), 1.0), atol=1e-3)

    @pytest.mark.parametrize("name", sorted(KIND_SETS))
    def test_variational_inequality(self, name):
        fs = KIND_SETS[name]
        rng = np.random.default_rng(6)
        members = fs.sample(rng, 200)
        for _ in range(50):
            y = 3 * rng.standard_normal(fs.dim)
            p = fs.project(y)
            assert fs.contains(p)
            assert ((members - p) @ (y - p)).max() <= 1e-9

    @settings(max_examples=200, deadline=None)
    @given(finite_vec, finite_vec)
    def test_nonexpansive(self, a, b):
        for fs in KIND_SETS.values():
            pa, pb = fs.project(a), fs.project(b)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) * (1 + 1e-9) + 1e-9


class TestContains:
    def test_l1_boundary(self):
        assert FeasibleSet.l1_ball(2, 1.0).contains([0.5, 0.5])

    def test_simplex_excess_mass(self):
        assert not FeasibleSet.simplex(2, 1.0).contains([0.5, 0.6])

    def test_box_tolerance(self):
        assert FeasibleSet.box(2, 0.0, 1.0).contains([1 + 1e-12, 0.0], tol=1e-9)

    def test_nan_not_contained(self):
        assert not FeasibleSet.l2_ball(2).contains([np.nan, 0.0])


class TestConstruction:
    @pytest.mark.parametrize("spec,kind", [("l1:1.0", "l1_ball"), ("l2:2.0", "l2_ball"),
                                           ("simplex:1.0", "simplex"), ("box:0:1", "box")])
    def test_parse(self, spec, kind):
        fs = FeasibleSet.parse(spec, 3)
        assert fs.kind == kind
        assert FeasibleSet.parse(fs.spec, 3).diameter == fs.diameter

    @pytest.mark.parametrize("spec", ["l3:1", "l1", "box:0", "l2:x", "box:1:0", "l1:-1"])
    def test_parse_errors(self, spec):
        with pytest.raises(ContractViolation):
            FeasibleSet.parse(spec, 3)

    def test_diameters(self):
        assert FeasibleSet.l1_ball(3, 1.5).diameter == 3.0
        assert FeasibleSet.l2_ball(3, 2.0).diameter == 4.0
        assert FeasibleSet.simplex(3, 2.0).diameter == pytest.approx(2 * np.sqrt(2))
        assert FeasibleSet.box(2, 0.0, [3.0, 4.0]).diameter == 5.0
