"""Inexact conditional gradient (ICG) for the proximal quadratic subproblem.

Solves ``min_{y in X} H(y) = <z, y - x> + beta/2 ||y - x||^2`` approximately
with ``M`` Frank-Wolfe steps and exact line search, starting from ``w = x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._numeric import all_finite
from .errors import ContractViolation, NumericalDomainError
from .sets import FeasibleSet, _lmo_approx_into

# Below this squared step length the LMO returned the current iterate: it is optimal.
_STALL = 1e-14


@dataclass(frozen=True, eq=False)
class IcgRequest:
    x: np.ndarray
    z: np.ndarray
    beta: float
    budget: int
    slack: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if x.ndim != 1 or z.shape != x.shape:
            raise ContractViolation("x and z must be vectors of equal length")
        if not self.beta > 0:
            raise ContractViolation("beta must be positive")
        if int(self.budget) != self.budget or self.budget < 0:
            raise ContractViolation("budget must be a nonnegative integer")
        if not self.slack >= 0:
            raise ContractViolation("slack must be nonnegative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "budget", int(self.budget))


@dataclass(frozen=True, eq=False)
class IcgResult:
    w: np.ndarray
    lmo_calls: int
    final_dual_gap_estimate: float


@njit(cache=True)
def _icg_kernel(kind, radius, lo, hi, diam_sq, x, z, beta, budget, delta, adversarial, w, history):
    d = x.shape[0]
    grad = np.empty(d)
    v = np.empty(d)
    work = np.empty(d)
    for i in range(d):
        w[i] = x[i]
    calls = 0
    gap = np.nan
    for t in range(budget):
        for i in range(d):
            grad[i] = z[i] + beta * (w[i] - x[i])
        _lmo_approx_into(kind, radius, lo, hi, grad, beta * diam_sq * delta / (t + 2),
                         adversarial, v, work)
        calls += 1
        num = 0.0
        den = 0.0
        for i in range(d):
            step = v[i] - w[i]
            num -= grad[i] * step
            den += step * step
        gap = num
        if den <= _STALL:
            if history.shape[0] > 0:
                for i in range(d):
                    history[t, i] = w[i]
            break
        mu = num / (beta * den)
        if mu > 1.0:
            mu = 1.0
        elif mu < 0.0:
            mu = 0.0
        for i in range(d):
            w[i] += mu * (v[i] - w[i])
        if history.shape[0] > 0:
            for i in range(d):
                history[t, i] = w[i]
    return calls, gap


def subproblem_value(req: IcgRequest, y) -> float:
    step = np.asarray(y, dtype=float) - req.x
    return float(req.z @ step + 0.5 * req.beta * (step @ step))


def run_icg(feasible: FeasibleSet, req: IcgRequest, adversarial: bool = False,
            return_history: bool = False):
    """Run ``req.budget`` Frank-Wolfe steps on the subproblem.

    Step ``t`` queries the LMO with slack ``beta * D^2 * delta / (t + 2)``.
    With ``return_history=True`` also returns the ``(lmo_calls, d)`` array of
    iterates ``w^1 .. w^M`` produced after each step.
    """
    if req.x.shape != (feasible.dim,):
        raise ContractViolation(f"x must have shape ({feasible.dim},)")
    history = np.empty((req.budget if return_history else 0, feasible.dim))
    w = np.empty(feasible.dim)
    calls, gap = _icg_kernel(feasible.code, feasible.radius, feasible.lo, feasible.hi,
                             feasible.diameter ** 2, req.x, req.z, float(req.beta), req.budget,
                             float(req.slack), bool(adversarial), w, history)
    if not all_finite(w):
        raise NumericalDomainError("non-finite ICG iterate")
    result = IcgResult(w, int(calls), float(gap))
    if return_history:
        return result, history[:calls]
    return result


def exact_subproblem_solution(feasible: FeasibleSet, x, z, beta: float) -> np.ndarray:
    """``proj_X(x - z / beta)``, the exact minimizer of the subproblem."""
    if not beta > 0:
        raise ContractViolation("beta must be positive")
    return feasible.project(np.asarray(x, dtype=float) - np.asarray(z, dtype=float) / beta)
