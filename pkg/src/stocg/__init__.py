"""Projection-free one-sample conditional gradient methods for stochastic
multi-level composition optimization."""

from .composition import (CompositionProblem, NoiseModel, SmoothMap, StochasticOracle,
                          chain_sample, exact_gradient, exact_value, sample_level)
from .diagnostics import (MeritConfig, TraceRecord, chain_constants, eta, fw_gap,
                          gradient_mapping, merit_value, rate_fit)
from .icg import IcgRequest, IcgResult, exact_subproblem_solution, run_icg, subproblem_value
from .sets import FeasibleSet
from .solvers import RunResult, Schedule, SolverState, run, step_asa1, step_linasa, step_nasa2

from ._version import __version__
