"""One-sample projection-free solvers for multi-level composition problems.

``linasa`` handles any depth T and tracks linearized inner-value estimates;
``nasa2`` (T = 2) uses plain moving averages for the inner value; ``asa1``
(T = 1) only averages gradients.  All three share the outer step: approximate
the proximal subproblem with ICG, then move a fraction ``tau_k`` towards it.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .composition import INIT, OUTPUT_INDEX, StochasticOracle, chain_sample
from .composition import exact_gradient
from .diagnostics import TraceRecord, gradient_mapping, nasa2_beta_threshold, trace_record
from .errors import ConfigError, ContractViolation, InvariantError
from .icg import IcgRequest, IcgResult, run_icg
from .sets import FeasibleSet

log = logging.getLogger(__name__)

ALGORITHMS = ("linasa", "nasa2", "asa1")


class RegimeWarning(UserWarning):
    """Step parameter outside the range covered by the convergence analysis."""


@dataclass(frozen=True)
class Schedule:
    """``tau_0 = 1, t_0 = 0`` and ``tau_k = 1/sqrt(N), t_k = ceil(sqrt(k))`` for ``k >= 1``."""

    n_iters: int
    beta: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if int(self.n_iters) != self.n_iters or self.n_iters < 1:
            raise ConfigError("n_iters must be a positive integer")
        if not self.beta > 0:
            raise ConfigError("beta must be positive")
        if not self.delta >= 0:
            raise ConfigError("delta must be nonnegative")

    def tau(self, k: int) -> float:
        return 1.0 if k == 0 else 1.0 / math.sqrt(self.n_iters)

    def icg_budget(self, k: int) -> int:
        return 0 if k == 0 else math.isqrt(k - 1) + 1


def total_lmo_calls(n_iters: int) -> int:
    """Closed-form LMO count of a run without early ICG exits."""
    sched = Schedule(n_iters)
    return sum(sched.icg_budget(k) for k in range(n_iters))


@dataclass(frozen=True, eq=False)
class SolverState:
    x: np.ndarray
    z: np.ndarray
    u: tuple  # u[i-1] estimates f_i(u_{i+1}); None when the variant drops it
    k: int = 0
    sfo_calls: int = 0
    lmo_calls: int = 0
    last_icg: Optional[IcgResult] = None


@dataclass(frozen=True, eq=False)
class RunResult:
    algorithm: str
    trace: list
    output_index: int
    x_R: np.ndarray
    z_R: np.ndarray
    u_R: tuple
    final: SolverState

    @property
    def record_R(self) -> TraceRecord:
        return self.trace[self.output_index]


def _outer_step(state: SolverState, feasible: FeasibleSet, sched: Schedule):
    k = state.k
    if k >= sched.n_iters:
        raise ContractViolation(f"state is at k={k}, the schedule has only {sched.n_iters} steps")
    tau = sched.tau(k)
    icg = run_icg(feasible, IcgRequest(state.x, state.z, sched.beta, sched.icg_budget(k), sched.delta))
    x_new = state.x + tau * (icg.w - state.x)
    if not feasible.contains(x_new):
        raise InvariantError(f"iterate left the feasible set at k={k + 1}")
    return tau, icg, x_new


def _require_T(oracle: StochasticOracle, T: int, name: str):
    if oracle.problem.T != T:
        raise ConfigError(f"{name} needs T={T}, the problem has T={oracle.problem.T}")


def step_linasa(state: SolverState, feasible: FeasibleSet, oracle: StochasticOracle,
                sched: Schedule) -> SolverState:
    T = oracle.problem.T
    tau, icg, x_new = _outer_step(state, feasible, sched)
    # level i is evaluated at u_{i+1}; u_{T+1} is x
    points = [*state.u[1:], state.x]
    samples, product = chain_sample(oracle, points)
    z_new = (1.0 - tau) * state.z + tau * product
    u_new = [None] * T
    # descending: the correction for u_i needs the fresh u_{i+1}
    for i in range(T, 0, -1):
        g, jac = samples[i - 1]
        moved = x_new if i == T else u_new[i]
        u_new[i - 1] = (1.0 - tau) * state.u[i - 1] + tau * g + jac.T @ (moved - points[i - 1])
    return SolverState(x_new, z_new, tuple(u_new), state.k + 1,
                       state.sfo_calls + 2 * T, state.lmo_calls + icg.lmo_calls, icg)


def step_nasa2(state: SolverState, feasible: FeasibleSet, oracle: StochasticOracle,
               sched: Schedule, lean_sfo: bool = False) -> SolverState:
    _require_T(oracle, 2, "nasa2")
    tau, icg, x_new = _outer_step(state, feasible, sched)
    u2 = state.u[1]
    g2, j2 = oracle.sample_level(2, state.x)
    j1 = oracle.sample_jacobian(1, u2)
    calls = 3
    if not lean_sfo:
        oracle.sample_value(1, u2)
        calls = 4
    z_new = (1.0 - tau) * state.z + tau * (j2 @ j1[:, 0])
    u2_new = (1.0 - tau) * u2 + tau * g2
    return SolverState(x_new, z_new, (None, u2_new), state.k + 1,
                       state.sfo_calls + calls, state.lmo_calls + icg.lmo_calls, icg)


def step_asa1(state: SolverState, feasible: FeasibleSet, oracle: StochasticOracle,
              sched: Schedule, lean_sfo: bool = False) -> SolverState:
    _require_T(oracle, 1, "asa1")
    tau, icg, x_new = _outer_step(state, feasible, sched)
    j1 = oracle.sample_jacobian(1, state.x)
    calls = 1
    if not lean_sfo:
        oracle.sample_value(1, state.x)
        calls = 2
    z_new = (1.0 - tau) * state.z + tau * j1[:, 0]
    return SolverState(x_new, z_new, (None,), state.k + 1,
                       state.sfo_calls + calls, state.lmo_calls + icg.lmo_calls, icg)


def initial_state(algorithm: str, x0, oracle: StochasticOracle, z0=None, u0=None) -> SolverState:
    """``z^0 = 0`` and inner estimates from one noisy forward pass on a dedicated stream."""
    problem = oracle.problem
    x0 = np.asarray(x0, dtype=float).copy()
    z0 = np.zeros(problem.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    if u0 is None:
        init = oracle.clone(derive_seed(oracle.seed, INIT))
        u = [None] * problem.T
        inp = x0
        for i in range(problem.T, 0, -1):
            u[i - 1] = init.sample_value(i, inp)
            inp = u[i - 1]
        u0 = u
    u0 = [None if v is None else np.asarray(v, dtype=float).copy() for v in u0]
    if algorithm == "nasa2":
        u0[0] = None
    elif algorithm == "asa1":
        u0 = [None]
    return SolverState(x0, z0, tuple(u0))


def derive_seed(*keys: int) -> int:
    """Pure 64-bit seed derivation from integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


STEPS = {"linasa": step_linasa, "nasa2": step_nasa2, "asa1": step_asa1}


def check_compatible(algorithm: str, T: int):
    if algorithm not in STEPS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    if algorithm == "nasa2" and T != 2:
        raise ConfigError(f"nasa2 needs a two-level problem, got T={T}")
    if algorithm == "asa1" and T != 1:
        raise ConfigError(f"asa1 needs a one-level problem, got T={T}")


def run(algorithm: str, x0, feasible: FeasibleSet, oracle: StochasticOracle, sched: Schedule,
        hooks: Sequence[Callable] = (), diagnose: bool = True, lean_sfo: bool = False,
        z0=None, u0=None) -> RunResult:
    """Run ``sched.n_iters`` outer steps and return the trace and the state at ``R``.

    ``R`` is uniform on ``{1..N}`` and comes from its own stream, so it is
    independent of the trajectory; drawing it up front lets the snapshot be
    taken on the fly.  Each hook is called as ``hook(record, state)``.

    ``diagnose`` may be ``True`` (all exact diagnostics), ``False`` (counters
    only) or ``"grad_map"`` (counters plus the squared gradient mapping, the
    cheap mode used by long Monte-Carlo studies).
    """
    if diagnose not in (True, False, "grad_map"):
        raise ConfigError(f"diagnose must be True, False or 'grad_map', got {diagnose!r}")
    problem = oracle.problem
    check_compatible(algorithm, problem.T)
    if not feasible.contains(x0):
        raise ContractViolation("x0 must lie in the feasible set")
    if algorithm == "nasa2" and problem.lipschitz_known:
        threshold = nasa2_beta_threshold(problem)
        if sched.beta < threshold:
            warnings.warn(
                f"beta={sched.beta:g} is below {threshold:.4g}, the smallest value covered "
                "by the two-level analysis; nasa2 is not parameter-free",
                RegimeWarning, stacklevel=2)
    step = STEPS[algorithm]
    extra = {} if algorithm == "linasa" else {"lean_sfo": lean_sfo}
    N = sched.n_iters
    R = int(oracle.auxiliary_stream(OUTPUT_INDEX).integers(1, N + 1))
    state = initial_state(algorithm, x0, oracle, z0, u0)
    trace = []
    snapshot = None

    def record(st, y_tilde):
        k = st.k
        if diagnose == "grad_map" and problem.has_exact:
            gm = gradient_mapping(feasible, st.x, exact_gradient(problem, st.x), sched.beta)
            rec = TraceRecord(k, sched.tau(k), sched.icg_budget(k), st.sfo_calls, st.lmo_calls,
                              grad_map_sq=float(gm @ gm), inner_err=(None,) * problem.T)
        elif diagnose is True:
            rec = trace_record(problem, feasible, st, k, sched.tau(k), sched.icg_budget(k),
                               sched.beta, y_tilde)
        else:
            rec = TraceRecord(k, sched.tau(k), sched.icg_budget(k), st.sfo_calls, st.lmo_calls,
                              inner_err=(None,) * problem.T)
        trace.append(rec)
        for hook in hooks:
            hook(rec, st)

    for _ in range(N):
        new = step(state, feasible, oracle, sched, **extra)
        record(state, new.last_icg.w)
        state = new
        if state.k == R:
            snapshot = state
    record(state, None)
    log.debug("%s finished N=%d: sfo=%d lmo=%d R=%d", algorithm, N,
              state.sfo_calls, state.lmo_calls, R)
    return RunResult(algorithm, trace, R, snapshot.x, snapshot.z, snapshot.u, state)
