"""Convex feasible sets with linear minimization oracles and projections.

Solvers only ever touch a set through :meth:`FeasibleSet.lmo` (and the
slack-tolerant :meth:`FeasibleSet.lmo_approx`).  Projections exist for the
diagnostics and as test oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from numba import njit

from ._numeric import all_finite
from .errors import ContractViolation

KINDS = {"l1_ball": 0, "l2_ball": 1, "simplex": 2, "box": 3}
_SPEC_NAMES = {"l1": "l1_ball", "l1_ball": "l1_ball", "l2": "l2_ball", "l2_ball": "l2_ball",
               "simplex": "simplex", "box": "box"}


@njit(cache=True)
def _lmo_into(kind, radius, lo, hi, g, out):
    d = g.shape[0]
    if kind == 0:
        j = 0
        best = abs(g[0])
        for i in range(1, d):
            if abs(g[i]) > best:
                best = abs(g[i])
                j = i
        for i in range(d):
            out[i] = 0.0
        if best > 0.0:
            out[j] = -radius if g[j] > 0.0 else radius
    elif kind == 1:
        nrm = 0.0
        for i in range(d):
            nrm += g[i] * g[i]
        nrm = math.sqrt(nrm)
        for i in range(d):
            out[i] = -radius * g[i] / nrm if nrm > 0.0 else 0.0
    elif kind == 2:
        j = 0
        for i in range(1, d):
            if g[i] < g[j]:
                j = i
        for i in range(d):
            out[i] = 0.0
        out[j] = radius
    else:
        for i in range(d):
            if g[i] > 0.0:
                out[i] = lo[i]
            elif g[i] < 0.0:
                out[i] = hi[i]
            else:
                out[i] = 0.5 * (lo[i] + hi[i])


@njit(cache=True)
def _lmo_approx_into(kind, radius, lo, hi, g, slack, adversarial, out, work):
    _lmo_into(kind, radius, lo, hi, g, out)
    if adversarial and slack > 0.0:
        # Slide from the exact minimizer toward the maximizer until the
        # objective has degraded by exactly `slack` (or the whole way).
        _lmo_into(kind, radius, lo, hi, -g, work)
        gap = 0.0
        for i in range(g.shape[0]):
            gap += g[i] * (work[i] - out[i])
        if gap > 0.0:
            theta = min(1.0, slack / gap)
            for i in range(g.shape[0]):
                out[i] += theta * (work[i] - out[i])


@njit(cache=True)
def _contains(kind, radius, lo, hi, v, tol):
    d = v.shape[0]
    if kind == 3:
        for i in range(d):
            if not (lo[i] - tol <= v[i] <= hi[i] + tol):
                return False
        return True
    acc = 0.0
    if kind == 0:
        for i in range(d):
            acc += abs(v[i])
        return acc <= radius + tol
    if kind == 1:
        for i in range(d):
            acc += v[i] * v[i]
        return np.sqrt(acc) <= radius + tol
    for i in range(d):
        if not v[i] >= -tol:
            return False
        acc += v[i]
    return abs(acc - radius) <= tol


def _project_simplex(y: np.ndarray, radius: float) -> np.ndarray:
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - radius
    idx = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(y - theta, 0.0)


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """A closed convex set in ``R^dim``.

    ``simplex`` is the scaled probability simplex ``{v >= 0, sum(v) = radius}``;
    ``box`` uses per-coordinate bounds ``lo <= v <= hi``.
    """

    kind: str
    dim: int
    radius: float = 1.0
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown set kind {self.kind!r}")
        if self.dim < 1:
            raise ContractViolation("set dimension must be positive")
        if self.kind == "box":
            lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (self.dim,)).copy()
            hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (self.dim,)).copy()
            if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ContractViolation("box bounds must be finite with lo <= hi")
        else:
            if not (self.radius > 0 and np.isfinite(self.radius)):
                raise ContractViolation("radius must be positive and finite")
            lo = hi = np.zeros(self.dim)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def l1_ball(cls, dim: int, radius: float = 1.0) -> "FeasibleSet":
        return cls("l1_ball", dim, radius)

    @classmethod
    def l2_ball(cls, dim: int, radius: float = 1.0) -> "FeasibleSet":
        return cls("l2_ball", dim, radius)

    @classmethod
    def simplex(cls, dim: int, radius: float = 1.0) -> "FeasibleSet":
        return cls("simplex", dim, radius)

    @classmethod
    def box(cls, dim: int, lo=0.0, hi=1.0) -> "FeasibleSet":
        return cls("box", dim, lo=lo, hi=hi)

    @classmethod
    def parse(cls, spec: str, dim: int) -> "FeasibleSet":
        """Build a set from ``l1:1.0``, ``l2:2.0``, ``simplex:1.0`` or ``box:0:1``."""
        name, *args = spec.strip().split(":")
        kind = _SPEC_NAMES.get(name.lower())
        try:
            vals = [float(a) for a in args]
        except ValueError:
            raise ContractViolation(f"bad numeric field in set spec {spec!r}") from None
        if kind is None:
            raise ContractViolation(f"unknown set {name!r} in spec {spec!r}")
        if kind == "box":
            if len(vals) != 2:
                raise ContractViolation("box spec needs lo and hi, e.g. 'box:0:1'")
            return cls.box(dim, vals[0], vals[1])
        if len(vals) != 1:
            raise ContractViolation(f"{name} spec needs exactly one radius, e.g. '{name}:1.0'")
        return cls(kind, dim, vals[0])

    @property
    def spec(self) -> str:
        if self.kind == "box":
            if np.all(self.lo == self.lo[0]) and np.all(self.hi == self.hi[0]):
                return f"box:{self.lo[0]:g}:{self.hi[0]:g}"
            return "box:custom"
        return f"{self.kind.split('_')[0]}:{self.radius:g}"

    @cached_property
    def code(self) -> int:
        return KINDS[self.kind]

    @cached_property
    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.hi - self.lo))
        if self.kind == "simplex":
            return self.radius * math.sqrt(2.0) if self.dim > 1 else 0.0
        return 2.0 * self.radius

    @property
    def max_norm(self) -> float:
        """``max ||v||`` over the set."""
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))
        return self.radius

    def canonical_point(self) -> np.ndarray:
        if self.kind == "box":
            return 0.5 * (self.lo + self.hi)
        if self.kind == "simplex":
            v = np.zeros(self.dim)
            v[0] = self.radius
            return v
        return np.zeros(self.dim)

    def _vector(self, g, name: str) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape != (self.dim,):
            raise ContractViolation(f"{name} must have shape ({self.dim},), got {g.shape}")
        if not all_finite(g):
            raise ContractViolation(f"{name} must be finite")
        return g

    def lmo(self, g) -> np.ndarray:
        """Exact minimizer of ``<g, v>`` over the set; ties go to the lowest index."""
        g = self._vector(g, "g")
        out = np.empty(self.dim)
        _lmo_into(self.code, self.radius, self.lo, self.hi, g, out)
        return out

    def lmo_approx(self, g, slack: float, adversarial: bool = False) -> np.ndarray:
        """A point whose objective is within ``slack`` of the exact LMO value.

        The default returns the exact minimizer.  ``adversarial=True`` returns
        the worst admissible point along the segment towards the maximizer,
        which is how the slack-robustness tests exercise inexact oracles.
        """
        if not slack >= 0:
            raise ContractViolation("slack must be nonnegative")
        g = self._vector(g, "g")
        out, work = np.empty(self.dim), np.empty(self.dim)
        _lmo_approx_into(self.code, self.radius, self.lo, self.hi, g, float(slack),
                         bool(adversarial), out, work)
        return out

    def project(self, y) -> np.ndarray:
        """Euclidean projection onto the set."""
        y = self._vector(y, "y")
        if self.kind == "box":
            return np.minimum(np.maximum(y, self.lo), self.hi)
        if self.kind == "l2_ball":
            nrm = np.linalg.norm(y)
            return y if nrm <= self.radius else y * (self.radius / nrm)
        if self.kind == "simplex":
            return _project_simplex(y, self.radius)
        if np.abs(y).sum() <= self.radius:
            return y.copy()
        return np.sign(y) * _project_simplex(np.abs(y), self.radius)

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,) or not all_finite(v):
            return False
        return bool(_contains(self.code, self.radius, self.lo, self.hi, v, float(tol)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` random members (rows), spread over the interior and boundary."""
        d = self.dim
        if self.kind == "box":
            return self.lo + (self.hi - self.lo) * rng.random((n, d))
        if self.kind == "simplex":
            return self.radius * rng.dirichlet(np.full(d, 0.5), size=n)
        scale = self.radius * rng.random((n, 1)) ** (1.0 / d)
        if self.kind == "l2_ball":
            g = rng.standard_normal((n, d))
            return scale * g / np.linalg.norm(g, axis=1, keepdims=True)
        signs = rng.choice([-1.0, 1.0], size=(n, d))
        return scale * signs * rng.dirichlet(np.full(d, 0.5), size=n)
