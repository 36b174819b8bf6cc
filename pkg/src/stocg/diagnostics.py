"""Stationarity measures and merit quantities computed from exact information.

Nothing here feeds back into the solvers' update rules; these are the
yardsticks used to check convergence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .composition import CompositionProblem, exact_gradient, exact_value
from .errors import ConfigError, DataError
from .sets import FeasibleSet


def gradient_mapping(feasible: FeasibleSet, x, g, beta: float) -> np.ndarray:
    """``beta * (x - proj_X(x - g / beta))``."""
    x = np.asarray(x, dtype=float)
    return beta * (x - feasible.project(x - np.asarray(g, dtype=float) / beta))


def fw_gap(feasible: FeasibleSet, x, g) -> float:
    """Frank-Wolfe gap ``max_{y in X} <g, x - y>``."""
    g = np.asarray(g, dtype=float)
    return float(g @ (np.asarray(x, dtype=float) - feasible.lmo(g)))


def eta(feasible: FeasibleSet, x, z, beta: float) -> float:
    """Optimal value of the proximal subproblem at ``(x, z)``; never positive."""
    x, z = np.asarray(x, dtype=float), np.asarray(z, dtype=float)
    step = feasible.project(x - z / beta) - x
    return float(z @ step + 0.5 * beta * (step @ step))


@dataclass(frozen=True)
class ChainConstants:
    lip_grad_F: float
    C: dict  # level j -> C_j for 2 <= j <= T
    lip_grad_eta: Optional[float] = None


def lip_grad_eta(beta: float) -> float:
    return 2.0 * math.sqrt((1.0 + beta) ** 2 + (1.0 + 1.0 / (2.0 * beta)) ** 2)


def _lipschitz_lists(problem: CompositionProblem):
    if not problem.lipschitz_known:
        raise ConfigError("every level needs lip_value and lip_grad for chain constants")
    Lf = [float(f.lip_value) for f in problem.levels]
    Lg = [float(f.lip_grad) for f in problem.levels]
    return Lf, Lg


def lip_grad_partial(problem: CompositionProblem, i: int = 1) -> float:
    """Gradient Lipschitz bound of ``F_i = f_i o ... o f_T``."""
    Lf, Lg = _lipschitz_lists(problem)
    T = problem.T
    total = 0.0
    for j in range(i, T + 1):
        outer = math.prod(Lf[l - 1] for l in range(i, j))
        inner = math.prod(Lf[l - 1] ** 2 for l in range(j + 1, T + 1))
        total += Lg[j - 1] * outer * inner
    return total


def chain_constants(problem: CompositionProblem, beta: Optional[float] = None) -> ChainConstants:
    """``L_gradF``, the tracking constants ``C_2..C_T`` and, given beta, ``L_grad_eta``."""
    Lf, Lg = _lipschitz_lists(problem)
    T = problem.T
    R = {1: Lg[0] * math.prod(Lf[1:])}
    for j in range(2, T):
        if Lf[j - 1] == 0:
            raise ConfigError(f"level {j} has zero value-Lipschitz constant; R_{j} undefined")
        R[j] = math.prod(Lf[:j - 1]) * Lg[j - 1] * math.prod(Lf[j:]) / Lf[j - 1]
    C = {}
    if T >= 2:
        C[2] = R[1]
    for j in range(3, T + 1):
        C[j] = sum(R[i] * math.prod(Lf[l - 1] for l in range(i + 1, j)) for i in range(1, j - 1))
    return ChainConstants(lip_grad_partial(problem, 1), C,
                          None if beta is None else lip_grad_eta(beta))


def nasa2_beta_threshold(problem: CompositionProblem) -> float:
    """Smallest beta for which some rho > 0 satisfies the two-level step condition.

    The condition is ``beta >= 6 rho L_gradF + (2 rho + 2 / (3 rho)) L_grad_f1 L_f2^2``;
    minimizing the right-hand side over rho gives ``2 sqrt(a b)`` with
    ``a = 6 L_gradF + 2 L_grad_f1 L_f2^2`` and ``b = (2/3) L_grad_f1 L_f2^2``.
    """
    if problem.T != 2:
        raise ConfigError("the threshold applies to two-level problems only")
    Lf, Lg = _lipschitz_lists(problem)
    s = Lg[0] * Lf[1] ** 2
    a = 6.0 * lip_grad_partial(problem) + 2.0 * s
    return 2.0 * math.sqrt(a * (2.0 / 3.0) * s)


@dataclass(frozen=True)
class MeritConfig:
    beta: float
    alpha: float
    gamma: tuple
    lip_grad_F: float
    chain: dict = field(default_factory=dict)

    @classmethod
    def default(cls, problem: CompositionProblem, beta: float) -> "MeritConfig":
        cc = chain_constants(problem)
        L = cc.lip_grad_F
        if L <= 0:
            raise ConfigError("default merit weights need a positive L_gradF")
        alpha = beta / (20.0 * L ** 2)
        T = problem.T
        gamma = [beta / 2.0]
        for j in range(2, T + 1):
            gamma.append((2 * alpha + 1 / (4 * alpha * L ** 2)) * (T - 1) * cc.C[j] ** 2 + beta / 2)
        return cls(beta, alpha, tuple(gamma), L, dict(cc.C))


def inner_errors(problem: CompositionProblem, x, u: Sequence) -> list:
    """``||f_i(u_{i+1}) - u_i||^2`` per level, ``None`` where ``u_i`` is not tracked."""
    out = []
    for i in range(1, problem.T + 1):
        if u[i - 1] is None:
            out.append(None)
            continue
        inp = x if i == problem.T else u[i]
        if inp is None:
            out.append(None)
            continue
        diff = np.asarray(problem.level(i).value(inp), dtype=float).reshape(-1) - u[i - 1]
        out.append(float(diff @ diff))
    return out


def merit_value(cfg: MeritConfig, problem: CompositionProblem, feasible: FeasibleSet,
                x, z, u: Sequence) -> float:
    if problem.f_star_lower_bound is None:
        raise ConfigError("merit function needs a lower bound F* on the objective")
    grad = exact_gradient(problem, x)
    err = grad - np.asarray(z, dtype=float)
    w = (exact_value(problem, x) - problem.f_star_lower_bound
         - eta(feasible, x, z, cfg.beta) + cfg.alpha * float(err @ err))
    for gamma, e in zip(cfg.gamma, inner_errors(problem, x, u)):
        if e is not None:
            w += gamma * e
    return w


@dataclass(frozen=True)
class TraceRecord:
    k: int
    tau: float
    t_icg: int
    sfo: int
    lmo: int
    grad_map_sq: Optional[float] = None
    fw_gap: Optional[float] = None
    z_err_sq: Optional[float] = None
    inner_err: tuple = ()
    H_gap: Optional[float] = None


def trace_record(problem, feasible, state, k, tau, t_icg, beta, y_tilde=None) -> TraceRecord:
    """Diagnostics for solver state ``state``; exact fields stay ``None`` on black boxes."""
    if not problem.has_exact:
        return TraceRecord(k, tau, t_icg, state.sfo_calls, state.lmo_calls,
                           inner_err=(None,) * problem.T)
    x, z = state.x, state.z
    grad = exact_gradient(problem, x)
    gm = gradient_mapping(feasible, x, grad, beta)
    err = grad - z
    h_gap = None
    if y_tilde is not None:
        s_tilde = y_tilde - x
        s_star = feasible.project(x - z / beta) - x
        h_gap = float(z @ (s_tilde - s_star)
                      + 0.5 * beta * (s_tilde @ s_tilde - s_star @ s_star))
    return TraceRecord(
        k, tau, t_icg, state.sfo_calls, state.lmo_calls,
        grad_map_sq=float(gm @ gm),
        fw_gap=float(grad @ (x - feasible.lmo(grad))),
        z_err_sq=float(err @ err),
        inner_err=tuple(inner_errors(problem, x, state.u)),
        H_gap=h_gap,
    )


def rate_fit(points: Sequence, min_reps: int = 20) -> tuple:
    """Least-squares fit of ``log(mean) = intercept + slope * log(N)``.

    ``points`` holds ``(N, mean)`` or ``(N, mean, replications)`` tuples.
    Returns ``(slope, intercept, r_squared)``.
    """
    ns, means = [], []
    for p in points:
        if len(p) == 3 and p[2] < min_reps:
            raise DataError(f"N={p[0]} has {p[2]} replications, need at least {min_reps}")
        ns.append(float(p[0]))
        means.append(float(p[1]))
    if len(set(ns)) < 3:
        raise DataError("rate fit needs at least three distinct N values")
    if any(not (m > 0 and math.isfinite(m)) for m in means):
        raise DataError("rate fit needs positive finite means")
    lx, ly = np.log(ns), np.log(means)
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2
