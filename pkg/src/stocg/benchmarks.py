"""Benchmark problem instances and the name-keyed registry used by the CLI.

* ``meandev`` - three-level mean-deviation risk-averse sparse phase retrieval
  over an l1 ball.
* ``twolevel`` - linear inner map under a smooth nonconvex outer function.
* ``quadbox`` / ``quadball`` - one-level quadratics with closed-form
  stationary points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .composition import CompositionProblem, NoiseModel, SmoothMap, StochasticOracle
from .errors import ConfigError
from .sets import FeasibleSet


@dataclass(frozen=True, eq=False)
class Benchmark:
    name: str
    problem: CompositionProblem
    oracle: StochasticOracle
    set_spec: str
    x0_hint: np.ndarray
    params: dict = field(default_factory=dict)

    def feasible_set(self, spec: Optional[str] = None) -> FeasibleSet:
        return FeasibleSet.parse(spec or self.set_spec, self.problem.dim)

    def x0(self, feasible: FeasibleSet) -> np.ndarray:
        return feasible.project(self.x0_hint)


# ---------------------------------------------------------------- quadratics

@dataclass(frozen=True, eq=False)
class QuadraticSpec:
    Q: np.ndarray
    c: np.ndarray
    set_spec: str = "box:-1:1"
    sigma_value: float = 0.0
    sigma_jacobian: float = 0.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if Q.shape != (c.size, c.size):
            raise ConfigError(f"Q must be {c.size}x{c.size}, got {Q.shape}")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12):
            raise ConfigError("Q must be symmetric")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)

    @property
    def d(self) -> int:
        return self.c.size


def build_quadratic(spec: QuadraticSpec, seed: int = 0, name: str = "quadratic",
                    f_star: Optional[float] = None, metadata: Optional[dict] = None):
    """``F(x) = x'Qx/2 + c'x`` as a one-level problem with Gaussian oracle noise.

    The value-Lipschitz constant is the bound ``||Q|| max_X ||x|| + ||c||``
    on the gradient norm over the configured set.  Without ``f_star`` the
    objective's lower bound comes from the spectrum and the set radius.
    """
    Q, c = spec.Q, spec.c
    feasible = FeasibleSet.parse(spec.set_spec, spec.d)
    qn = float(np.linalg.norm(Q, 2))
    R = feasible.max_norm
    lam_min = float(np.linalg.eigvalsh(Q)[0])
    f = SmoothMap(
        spec.d, 1,
        value=lambda x: np.array([0.5 * x @ Q @ x + c @ x]),
        jacobian=lambda x: (Q @ x + c)[None, :],
        lip_value=qn * R + float(np.linalg.norm(c)),
        lip_grad=qn,
        name="quadratic",
    )
    meta = {"f_star_source": "closed form"} if f_star is not None else {
        "f_star_source": "spectral lower bound"}
    if f_star is None:
        f_star = 0.5 * min(lam_min, 0.0) * R ** 2 - float(np.linalg.norm(c)) * R
    problem = CompositionProblem((f,), f_star_lower_bound=f_star, name=name,
                                 metadata={**meta, **(metadata or {})})
    noise = NoiseModel.gaussian(1, spec.sigma_value, spec.sigma_jacobian)
    return problem, StochasticOracle(problem, noise, seed)


def quadbox(d: int = 10, sigma: float = 1.0, seed: int = 0, lo: float = -1.0, hi: float = 1.0) -> Benchmark:
    """``||x||^2 / 2`` on a box around the origin; the unique stationary point is 0."""
    spec = QuadraticSpec(np.eye(d), np.zeros(d), f"box:{lo:g}:{hi:g}", sigma, sigma)
    if not lo <= 0 <= hi:
        raise ConfigError("quadbox needs a box containing the origin")
    problem, oracle = build_quadratic(spec, seed, "quadbox", 0.0, {"stationary": [0.0] * d})
    return Benchmark("quadbox", problem, oracle, spec.set_spec,
                     np.full(d, 0.5 * hi), dict(d=d, sigma=sigma, lo=lo, hi=hi))


def quadball(sigma: float = 0.0, seed: int = 0) -> Benchmark:
    """Saddle ``(x1^2 - x2^2) / 2`` on the unit disc.

    KKT points: the origin and ``(0, +-1)``; only the latter two are minimizers.
    """
    spec = QuadraticSpec(np.diag([1.0, -1.0]), np.zeros(2), "l2:1", sigma, sigma)
    problem, oracle = build_quadratic(
        spec, seed, "quadball", -0.5, {"stationary": [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0]]})
    return Benchmark("quadball", problem, oracle, "l2:1", np.array([0.6, 0.3]), dict(sigma=sigma))


# ------------------------------------------------------------------ two-level

def build_two_level(d: int = 10, conditioning: float = 10.0, sigma_value=0.1, sigma_jacobian=0.1,
                    offset: float = 0.1, linear_weight: float = 0.5, rotate: bool = True,
                    set_spec: str = "l2:1", seed: int = 0):
    """``f_1(y) = sum log(1 + y_j^2) + <c, y>`` over ``f_2(x) = A x + b``.

    ``A`` has singular values spread geometrically from 1 down to
    ``1/conditioning``; with ``conditioning=1, rotate=False, offset=0`` it is
    the identity.  ``f_1`` is nonconvex with ``|f_1''| <= 2``.
    """
    if d < 2:
        raise ConfigError("the two-level benchmark needs d >= 2")
    if conditioning < 1:
        raise ConfigError("conditioning must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    svals = np.geomspace(1.0, 1.0 / conditioning, d)
    if rotate:
        U, _ = np.linalg.qr(rng.standard_normal((d, d)))
        V, _ = np.linalg.qr(rng.standard_normal((d, d)))
        A = U @ np.diag(svals) @ V.T
    else:
        A = np.diag(svals)
    b = offset * rng.standard_normal(d)
    c = linear_weight * rng.choice([-1.0, 1.0], size=d)
    feasible = FeasibleSet.parse(set_spec, d)
    a_norm = float(svals[0])

    inner = SmoothMap(d, d, value=lambda x: A @ x + b, jacobian=lambda x: A,
                      lip_value=a_norm, lip_grad=0.0, name="affine")
    outer = SmoothMap(
        d, 1,
        value=lambda y: np.array([np.log1p(y * y).sum() + c @ y]),
        jacobian=lambda y: (2 * y / (1 + y * y) + c)[None, :],
        lip_value=math.sqrt(d) + float(np.linalg.norm(c)),
        lip_grad=2.0,
        name="log-penalty",
    )
    y_bound = a_norm * feasible.max_norm + float(np.linalg.norm(b))
    problem = CompositionProblem(
        (outer, inner), f_star_lower_bound=-float(np.linalg.norm(c)) * y_bound, name="twolevel",
        metadata={"A": A, "b": b, "c": c, "f_star_source": "log term >= 0 plus Cauchy-Schwarz"})
    noise = NoiseModel.gaussian(2, sigma_value, sigma_jacobian)
    return problem, StochasticOracle(problem, noise, seed)


def twolevel(d: int = 10, conditioning: float = 10.0, sigma: float = 0.5, seed: int = 0,
             set_spec: str = "l2:1", sigma_value: Optional[float] = None,
             sigma_jacobian: Optional[float] = None, **kw) -> Benchmark:
    """Registry wrapper; ``sigma`` sets both noise levels unless overridden."""
    sv = sigma if sigma_value is None else sigma_value
    sj = sigma if sigma_jacobian is None else sigma_jacobian
    problem, oracle = build_two_level(d, conditioning, sv, sj, set_spec=set_spec, seed=seed, **kw)
    return Benchmark("twolevel", problem, oracle, set_spec, np.zeros(d),
                     dict(d=d, conditioning=conditioning, sigma_value=sv, sigma_jacobian=sj, **kw))


# -------------------------------------------------------------- mean-deviation

@dataclass(frozen=True)
class MeanDeviationSpec:
    d: int = 10
    rho: float = 1.0
    smoothing: float = 1e-2
    sparsity: int = 3
    x_star_l1: float = 0.3
    noise_std: float = 0.1
    l1_radius: Optional[float] = None  # default 1.5 * ||x*||_1
    n_samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or not 1 <= self.sparsity <= self.d:
            raise ConfigError("need d >= 1 and 1 <= sparsity <= d")
        if not (self.rho > 0 and self.smoothing > 0 and self.x_star_l1 > 0):
            raise ConfigError("rho, smoothing and x_star_l1 must be positive")
        if self.noise_std < 0 or self.n_samples < 1:
            raise ConfigError("noise_std must be >= 0 and n_samples >= 1")
        if self.l1_radius is not None and self.l1_radius < self.x_star_l1:
            raise ConfigError("the planted solution must lie inside the l1 ball")

    @property
    def radius(self) -> float:
        return 1.5 * self.x_star_l1 if self.l1_radius is None else float(self.l1_radius)


def planted_solution(spec: MeanDeviationSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 3, 0]))
    x = np.zeros(spec.d)
    support = rng.choice(spec.d, size=spec.sparsity, replace=False)
    x[support] = rng.choice([-1.0, 1.0], size=spec.sparsity) * spec.x_star_l1 / spec.sparsity
    return x


def phase_retrieval_data(spec: MeanDeviationSpec, x_star: np.ndarray):
    """Frozen sample ``b = <a, x*>^2 + noise`` with standard Gaussian ``a``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 3, 1]))
    a = rng.standard_normal((spec.n_samples, spec.d))
    b = (a @ x_star) ** 2 + spec.noise_std * rng.standard_normal(spec.n_samples)
    return a, b


def _sqrt_smooth(t, delta):
    """``sqrt(t + delta)`` and its derivative for ``t >= 0``, continued by the
    tangent line for ``t < 0``.

    The continuation keeps the map C^1 with derivative bounded by
    ``1 / (2 sqrt(delta))`` and derivative Lipschitz constant
    ``1 / (4 delta^1.5)``, so negative variance estimates stay harmless.
    """
    if t >= 0:
        s = math.sqrt(t + delta)
        return s, 0.5 / s
    r = math.sqrt(delta)
    return r + t / (2 * r), 1 / (2 * r)


@njit(cache=True)
def _phase_losses(a, b, x):
    n, d = a.shape
    U = np.empty(n)
    w = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += a[i, j] * x[j]
        r = b[i] - s * s
        U[i] = r * r
        w[i] = -4.0 * r * s
    return U, w


def build_mean_deviation(spec: MeanDeviationSpec):
    """Three-level stack ``d -> 1+d -> 2 -> 1`` minimizing
    ``-E[U] + rho * sqrt(E[(E[U] - U)^2] + delta)`` with
    ``U(x; a, b) = (b - <a, x>^2)^2``.

    The innermost level returns ``(E[U], x)`` so the middle level can see the
    pair ``(z, x)``.  Expectations are over a frozen sample of ``(a, b)``
    pairs; the oracle draws one pair uniformly from that sample per call, so
    its draws are unbiased for the exact evaluators.
    """
    x_star = planted_solution(spec)
    a, b = phase_retrieval_data(spec, x_star)
    n, d, rho, delta = spec.n_samples, spec.d, spec.rho, spec.smoothing

    cache = {}

    def losses(x):
        # U and the per-sample weight w with grad U = w * a, over the frozen
        # sample; diagnostics ask for the same point several times per step
        key = x.tobytes()
        hit = cache.get(key)
        if hit is None:
            if len(cache) >= 4:
                cache.clear()
            hit = cache[key] = _phase_losses(a, b, x)
        return hit

    def sample_loss(x, i):
        s = a[i] @ x
        r = b[i] - s * s
        return r * r, (-4 * r * s) * a[i]

    def f3_value(x):
        U, _ = losses(x)
        return np.concatenate([[U.mean()], x])

    def f3_jac(x):
        _, w = losses(x)
        return np.vstack([a.T @ w / n, np.eye(d)])

    def f3_sample_value(x, rng):
        U, _ = sample_loss(x, int(rng.integers(n)))
        return np.concatenate([[U], x])

    def f3_sample_jac(x, rng):
        _, dU = sample_loss(x, int(rng.integers(n)))
        return np.vstack([dU, np.eye(d)])

    def f2_value(y):
        U, _ = losses(y[1:])
        diff = y[0] - U
        return np.array([y[0], diff @ diff / n])

    def f2_jac(y):
        U, w = losses(y[1:])
        diff = y[0] - U
        row = np.concatenate([[2 * diff.mean()], -2 * (a.T @ (diff * w)) / n])
        return np.vstack([np.eye(1, d + 1), row])

    def f2_sample_value(y, rng):
        U, _ = sample_loss(y[1:], int(rng.integers(n)))
        diff = y[0] - U
        return np.array([y[0], diff * diff])

    def f2_sample_jac(y, rng):
        U, dU = sample_loss(y[1:], int(rng.integers(n)))
        diff = y[0] - U
        return np.vstack([np.eye(1, d + 1), np.concatenate([[2 * diff], -2 * diff * dU])])

    def f1_value(y):
        s, _ = _sqrt_smooth(y[1], delta)
        return np.array([-y[0] + rho * s])

    def f1_jac(y):
        _, ds = _sqrt_smooth(y[1], delta)
        return np.array([[-1.0, rho * ds]])

    # Lipschitz bounds valid on the image of the l1 ball
    r = spec.radius
    S = np.abs(a).max(axis=1) * r
    A2 = np.linalg.norm(a, axis=1)
    Rb = np.abs(b) + S ** 2
    Umax = Rb ** 2
    g = 4 * Rb * S * A2
    h = (12 * S ** 2 + 4 * np.abs(b)) * A2 ** 2
    U_bar = Umax.mean()
    m = np.maximum(U_bar, Umax)
    grad_phi = math.hypot(2 * m.mean(), 2 * (m * g).mean())

    level3 = SmoothMap(d, d + 1, f3_value, f3_jac, lip_value=math.sqrt(1 + g.mean() ** 2),
                       lip_grad=float(h.mean()), sample_value=f3_sample_value,
                       sample_jacobian=f3_sample_jac, name="mean-loss")
    level2 = SmoothMap(d + 1, 2, f2_value, f2_jac, lip_value=math.sqrt(1 + grad_phi ** 2),
                       lip_grad=float(2 + 4 * g.mean() + 2 * (g ** 2 + m * h).mean()),
                       sample_value=f2_sample_value, sample_jacobian=f2_sample_jac,
                       name="deviation")
    level1 = SmoothMap(2, 1, f1_value, f1_jac, lip_value=math.sqrt(1 + rho ** 2 / (4 * delta)),
                       lip_grad=rho / (4 * delta ** 1.5),
                       sample_value=lambda y, rng: f1_value(y),
                       sample_jacobian=lambda y, rng: f1_jac(y), name="mean-minus-deviation")
    problem = CompositionProblem(
        (level1, level2, level3),
        f_star_lower_bound=float(-U_bar + rho * math.sqrt(delta)),
        name="meandev",
        metadata={"x_star": x_star, "smoothing": delta, "rho": rho,
                  "f_star_source": "-mean(sup U) + rho sqrt(delta)"},
    )
    return problem, StochasticOracle(problem, NoiseModel("native"), spec.seed)


def meandev(seed: int = 0, **params) -> Benchmark:
    spec = MeanDeviationSpec(seed=seed, **params)
    problem, oracle = build_mean_deviation(spec)
    hint = np.zeros(spec.d)
    hint[0] = 0.5 * spec.radius
    return Benchmark("meandev", problem, oracle, f"l1:{spec.radius:g}", hint,
                     dict(params, seed=seed))


REGISTRY = {"meandev": meandev, "twolevel": twolevel, "quadbox": quadbox, "quadball": quadball}


def make_benchmark(name: str, seed: int = 0, **params) -> Benchmark:
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; choose from {', '.join(REGISTRY)}") from None
    try:
        return builder(seed=seed, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None
