"""Nested objectives F = f_1 o ... o f_T and their stochastic first-order oracle.

Level ``1`` is the outermost (scalar-valued) map and level ``T`` the innermost,
which receives the decision variable ``x``.  Jacobians returned by the oracle
are *transposed*: the sample for level ``i`` has shape ``(d_i, d_{i-1})``, so
the chain ``J_T J_{T-1} ... J_1`` is a ``d``-vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._numeric import all_finite
from .errors import ConfigError, ContractViolation, NumericalDomainError

VALUE, JACOBIAN, OUTPUT_INDEX, INIT = 0, 1, 2, 3
NOISE_KINDS = ("none", "gaussian_additive", "native")


@dataclass(frozen=True, eq=False)
class SmoothMap:
    """One level ``f: R^in_dim -> R^out_dim`` of the composition.

    ``jacobian`` returns the ordinary ``(out_dim, in_dim)`` Jacobian.  The
    optional ``sample_value``/``sample_jacobian`` callables take ``(y, rng)``
    and return one unbiased stochastic draw; they are used by oracles with the
    ``native`` noise kind.
    """

    in_dim: int
    out_dim: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    lip_value: Optional[float] = None
    lip_grad: Optional[float] = None
    sample_value: Optional[Callable] = None
    sample_jacobian: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ContractViolation("map dimensions must be positive")


@dataclass(frozen=True, eq=False)
class CompositionProblem:
    levels: tuple
    f_star_lower_bound: Optional[float] = None
    has_exact: bool = True
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ConfigError("a composition needs at least one level")
        if levels[0].out_dim != 1:
            raise ConfigError("the outermost level must be scalar-valued")
        for i in range(len(levels) - 1):
            if levels[i].in_dim != levels[i + 1].out_dim:
                raise ConfigError(
                    f"level {i + 1} expects dimension {levels[i].in_dim} but "
                    f"level {i + 2} produces {levels[i + 1].out_dim}"
                )

    @property
    def T(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.levels[-1].in_dim

    @property
    def dims(self) -> tuple:
        """The chain ``(d_T, ..., d_1, d_0)`` with ``d_T = dim`` and ``d_0 = 1``."""
        return (self.dim,) + tuple(f.out_dim for f in reversed(self.levels))

    def level(self, i: int) -> SmoothMap:
        if not 1 <= i <= self.T:
            raise ContractViolation(f"level must be in 1..{self.T}, got {i}")
        return self.levels[i - 1]

    @property
    def lipschitz_known(self) -> bool:
        return all(f.lip_value is not None and f.lip_grad is not None for f in self.levels)


@dataclass(frozen=True)
class NoiseModel:
    """Per-level noise standard deviations.

    With ``gaussian_additive`` every value coordinate receives
    ``N(0, sigma_value[i]^2)`` noise and every Jacobian entry
    ``N(0, sigma_jacobian[i]^2)`` noise.  ``native`` defers to the maps' own
    samplers; ``none`` returns exact information.
    """

    kind: str = "none"
    sigma_value: tuple = ()
    sigma_jacobian: tuple = ()

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        sv, sj = tuple(map(float, self.sigma_value)), tuple(map(float, self.sigma_jacobian))
        if self.kind != "gaussian_additive":
            sv, sj = tuple(0.0 for _ in sv), tuple(0.0 for _ in sj)
        if any(s < 0 or not np.isfinite(s) for s in sv + sj):
            raise ConfigError("noise levels must be finite and nonnegative")
        object.__setattr__(self, "sigma_value", sv)
        object.__setattr__(self, "sigma_jacobian", sj)

    @classmethod
    def gaussian(cls, T: int, sigma_value=0.0, sigma_jacobian=0.0) -> "NoiseModel":
        def per_level(s):
            s = np.broadcast_to(np.asarray(s, dtype=float), (T,))
            return tuple(float(v) for v in s)

        return cls("gaussian_additive", per_level(sigma_value), per_level(sigma_jacobian))

    def sigmas(self, level: int) -> tuple:
        def pick(seq):
            return seq[level - 1] if level - 1 < len(seq) else 0.0

        return pick(self.sigma_value), pick(self.sigma_jacobian)


def _stream(seed: int, level: int, kind: int) -> np.random.Generator:
    # Philox is counter-based; distinct (seed, level, kind) keys give independent streams.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), level, kind])))


def _as_point(point, dim: int, level: int) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    if point.shape != (dim,):
        raise ContractViolation(
            f"level {level} expects a point of shape ({dim},), got {point.shape}"
        )
    return point


def _checked(arr, level: int, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not all_finite(arr):
        raise NumericalDomainError(f"non-finite {what} at level {level}", level=level)
    return arr


class StochasticOracle:
    """Per-level sampler of noisy values ``G_i`` and transposed Jacobians ``J_i``.

    Every ``(level, value|jacobian)`` pair owns its own random stream, so
    draws at one level never influence another level or the other kind.
    Not safe to share between threads; use :meth:`clone` per worker.
    """

    def __init__(self, problem: CompositionProblem, noise: Optional[NoiseModel] = None, seed: int = 0):
        self.problem = problem
        self.noise = noise if noise is not None else NoiseModel()
        self.seed = int(seed)
        if self.noise.kind == "native":
            missing = [i + 1 for i, f in enumerate(problem.levels)
                       if f.sample_value is None or f.sample_jacobian is None]
            if missing:
                raise ConfigError(f"native noise requested but levels {missing} have no sampler")
        self._streams = {
            (level, kind): _stream(self.seed, level, kind)
            for level in range(1, problem.T + 1)
            for kind in (VALUE, JACOBIAN)
        }

    def clone(self, seed: int) -> "StochasticOracle":
        return StochasticOracle(self.problem, self.noise, seed)

    def auxiliary_stream(self, kind: int) -> np.random.Generator:
        """A stream disjoint from all level streams (level index 0)."""
        return _stream(self.seed, 0, kind)

    def sample_value(self, level: int, point) -> np.ndarray:
        f = self.problem.level(level)
        point = _as_point(point, f.in_dim, level)
        rng = self._streams[level, VALUE]
        if self.noise.kind == "native":
            g = f.sample_value(point, rng)
        else:
            g = np.asarray(f.value(point), dtype=float).reshape(f.out_dim)
            sigma, _ = self.noise.sigmas(level)
            if sigma > 0:
                g = g + sigma * rng.standard_normal(f.out_dim)
        return _checked(g, level, "value sample").reshape(f.out_dim)

    def sample_jacobian(self, level: int, point) -> np.ndarray:
        f = self.problem.level(level)
        point = _as_point(point, f.in_dim, level)
        rng = self._streams[level, JACOBIAN]
        if self.noise.kind == "native":
            jac = f.sample_jacobian(point, rng)
        else:
            jac = np.asarray(f.jacobian(point), dtype=float).reshape(f.out_dim, f.in_dim)
            _, sigma = self.noise.sigmas(level)
            if sigma > 0:
                jac = jac + sigma * rng.standard_normal((f.out_dim, f.in_dim))
        jac = _checked(jac, level, "Jacobian sample").reshape(f.out_dim, f.in_dim)
        return jac.T

    def sample_level(self, level: int, point) -> tuple:
        """One fresh ``(G, J)`` pair at ``point``; ``J`` is ``(in_dim, out_dim)``."""
        return self.sample_value(level, point), self.sample_jacobian(level, point)


def sample_level(oracle: StochasticOracle, level: int, point) -> tuple:
    return oracle.sample_level(level, point)


def chain_product(jacobians: Sequence[np.ndarray]) -> np.ndarray:
    """``J_T ... J_1`` for transposed Jacobians ``jacobians[i-1] = J_i``.

    Evaluated right to left as matrix-vector products starting from the
    ``d_1 x 1`` factor ``J_1``.
    """
    v = jacobians[0][:, 0]
    for jac in jacobians[1:]:
        v = jac @ v
    return v


def inner_values(problem: CompositionProblem, x) -> list:
    """Exact evaluation points: entry ``i-1`` is the input of level ``i``.

    The last entry is ``x`` itself; entry ``0`` feeds the outermost map.
    """
    x = _as_point(x, problem.dim, problem.T)
    points = [None] * problem.T
    points[-1] = x
    for i in range(problem.T, 1, -1):
        f = problem.level(i)
        points[i - 2] = _checked(f.value(points[i - 1]), i, "value").reshape(f.out_dim)
    return points


def exact_value(problem: CompositionProblem, x) -> float:
    points = inner_values(problem, x)
    return float(_checked(problem.level(1).value(points[0]), 1, "value").reshape(1)[0])


def exact_gradient(problem: CompositionProblem, x) -> np.ndarray:
    points = inner_values(problem, x)
    jacs = []
    for i, f in enumerate(problem.levels, start=1):
        jac = _checked(f.jacobian(points[i - 1]), i, "Jacobian")
        jacs.append(jac.reshape(f.out_dim, f.in_dim).T)
    return chain_product(jacs)


def chain_sample(oracle: StochasticOracle, points: Sequence) -> tuple:
    """Draw one ``(G_i, J_i)`` per level at ``points[i-1]`` and their chain product.

    Returns ``(samples, product)`` where ``samples[i-1] = (G_i, J_i)``.
    """
    T = oracle.problem.T
    if len(points) != T:
        raise ContractViolation(f"expected {T} evaluation points, got {len(points)}")
    samples = [oracle.sample_level(i, points[i - 1]) for i in range(1, T + 1)]
    return samples, chain_product([jac for _, jac in samples])


def finite_difference_jacobian(f: SmoothMap, y, step: float = 1e-6) -> np.ndarray:
    """Central-difference ``(out_dim, in_dim)`` Jacobian, used as a test oracle."""
    y = np.asarray(y, dtype=float)
    cols = []
    for j in range(f.in_dim):
        e = np.zeros_like(y)
        e[j] = step
        diff = np.asarray(f.value(y + e), dtype=float) - np.asarray(f.value(y - e), dtype=float)
        cols.append(diff.reshape(f.out_dim) / (2 * step))
    return np.column_stack(cols)
