"""Seeded replication runner, aggregation and tidy output.

Every ``(N, r)`` cell runs on its own oracle clone seeded with
``derive_seed(master_seed, N, r)``, so a single cell can be re-run in
isolation.  Reduction happens in a fixed ``(N, r)`` order after all cells
finish, which makes serial and parallel execution produce identical reports.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._version import __version__
from .benchmarks import Benchmark, make_benchmark
from .diagnostics import TraceRecord, rate_fit
from .errors import ConfigError, ContractViolation, DataError, StatisticalPowerError, StocgError
from .solvers import ALGORITHMS, Schedule, check_compatible, derive_seed, run

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
VERSION_STRING = f"v{__version__}"
FORMATS = ("csv", "json")
MIN_QUANTILE_REPS = 200


def trace_header(T: int) -> list:
    return (["k", "tau", "t_icg", "grad_map_sq", "fw_gap", "z_err_sq"]
            + [f"inner_err_{i}" for i in range(1, T + 1)] + ["H_gap", "sfo", "lmo"])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trace_row(rec: TraceRecord, T: int) -> list:
    inner = tuple(rec.inner_err) or (None,) * T
    vals = [rec.k, rec.tau, rec.t_icg, rec.grad_map_sq, rec.fw_gap, rec.z_err_sq,
            *inner, rec.H_gap, rec.sfo, rec.lmo]
    return [_cell(v) for v in vals]


def record_to_dict(rec: TraceRecord) -> dict:
    d = asdict(rec)
    d["inner_err"] = list(rec.inner_err)
    return d


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    algorithm: str
    set_spec: Optional[str] = None
    n_values: tuple = (100,)
    beta: float = 1.0
    delta: float = 0.0
    replications: int = 1
    master_seed: int = 0
    output: Optional[str] = None
    format: str = "csv"
    workers: int = 1
    problem_params: dict = field(default_factory=dict)
    lean_sfo: bool = False
    keep_traces: bool = True

    def __post_init__(self):
        ns = tuple(int(n) for n in self.n_values)
        if not ns or any(n < 1 or n != m for n, m in zip(ns, self.n_values)):
            raise ConfigError("N values must be positive integers")
        object.__setattr__(self, "n_values", ns)
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigError("replications must be a positive integer")
        if not self.beta > 0 or not math.isfinite(self.beta):
            raise ConfigError("beta must be positive and finite")
        if not self.delta >= 0 or not math.isfinite(self.delta):
            raise ConfigError("delta must be nonnegative and finite")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {', '.join(FORMATS)}")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        object.__setattr__(self, "problem_params", dict(self.problem_params))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_values"] = list(self.n_values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["n_values"] = tuple(d.get("n_values", (100,)))
        return cls(**d)

    @property
    def data_seed(self) -> int:
        """Seed of the problem data (frozen samples, random matrices)."""
        return int(self.problem_params.get("seed", self.master_seed))

    def benchmark(self) -> Benchmark:
        params = {k: v for k, v in self.problem_params.items() if k != "seed"}
        return make_benchmark(self.problem, self.data_seed, **params)

    def validate(self) -> Benchmark:
        """Build the benchmark and check algorithm, problem and set agree."""
        bench = self.benchmark()
        check_compatible(self.algorithm, bench.problem.T)
        try:
            bench.feasible_set(self.set_spec)
        except ContractViolation as exc:
            raise ConfigError(str(exc)) from None
        return bench


@dataclass(frozen=True)
class RunSummary:
    n_iters: int
    replication: int
    seed: int
    status: str = "ok"
    error: Optional[str] = None
    output_index: Optional[int] = None
    grad_map_sq: Optional[float] = None
    z_err_sq: Optional[float] = None
    inner_err: tuple = ()
    min_grad_map_sq: Optional[float] = None
    sfo: Optional[int] = None
    lmo: Optional[int] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inner_err"] = list(self.inner_err)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        d = dict(d)
        d["inner_err"] = tuple(d.get("inner_err", ()))
        return cls(**d)


# One benchmark per (worker process, config); building meandev is not free.
_BENCH_CACHE: dict = {}


def _cached_benchmark(cfg: ExperimentConfig) -> Benchmark:
    key = json.dumps([cfg.problem, cfg.problem_params, cfg.master_seed], sort_keys=True)
    bench = _BENCH_CACHE.get(key)
    if bench is None:
        bench = _BENCH_CACHE[key] = cfg.benchmark()
    return bench


def run_cell(cfg: ExperimentConfig, n_iters: int, replication: int, diagnose=True):
    """Run one replication; returns ``(RunSummary, trace or None)``.

    Solver failures are caught and reported through ``status``; the caller
    decides whether to abort.
    """
    seed = derive_seed(cfg.master_seed, n_iters, replication)
    bench = _cached_benchmark(cfg)
    feasible = bench.feasible_set(cfg.set_spec)
    oracle = bench.oracle.clone(seed)
    sched = Schedule(n_iters, cfg.beta, cfg.delta)
    try:
        res = run(cfg.algorithm, bench.x0(feasible), feasible, oracle, sched,
                  diagnose=diagnose, lean_sfo=cfg.lean_sfo)
    except (StocgError, ArithmeticError) as exc:
        log.warning("N=%d r=%d failed: %s", n_iters, replication, exc)
        return RunSummary(n_iters, replication, seed, "failed", f"{type(exc).__name__}: {exc}"), None
    rec = res.record_R
    gms = [r.grad_map_sq for r in res.trace[1:] if r.grad_map_sq is not None]
    summary = RunSummary(
        n_iters, replication, seed,
        output_index=res.output_index,
        grad_map_sq=rec.grad_map_sq,
        z_err_sq=rec.z_err_sq,
        inner_err=tuple(rec.inner_err),
        min_grad_map_sq=min(gms) if gms else None,
        sfo=res.final.sfo_calls,
        lmo=res.final.lmo_calls,
    )
    return summary, (res.trace if cfg.keep_traces else None)


def _run_cell_task(args):
    return run_cell(*args)


def _mean_se(values: Sequence) -> tuple:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    n = len(vals)
    mean = math.fsum(vals) / n
    if n < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass(frozen=True)
class NStats:
    n_iters: int
    replications: int
    grad_map_mean: Optional[float]
    grad_map_se: Optional[float]
    z_err_mean: Optional[float]
    z_err_se: Optional[float]
    inner_err_mean: tuple
    inner_err_se: tuple
    sfo_total: int
    lmo_total: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inner_err_mean"] = list(self.inner_err_mean)
        d["inner_err_se"] = list(self.inner_err_se)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NStats":
        d = dict(d)
        d["inner_err_mean"] = tuple(d["inner_err_mean"])
        d["inner_err_se"] = tuple(d["inner_err_se"])
        return cls(**d)


def aggregate(runs: Sequence[RunSummary], T: int) -> list:
    """Per-N statistics of the at-R diagnostics, reduced in replication order."""
    by_n: dict = {}
    for s in sorted(runs, key=lambda s: (s.n_iters, s.replication)):
        if s.status == "ok":
            by_n.setdefault(s.n_iters, []).append(s)
    out = []
    for n in sorted(by_n):
        group = by_n[n]
        gm = _mean_se([s.grad_map_sq for s in group])
        ze = _mean_se([s.z_err_sq for s in group])
        inner = [_mean_se([s.inner_err[i] if s.inner_err else None for s in group])
                 for i in range(T)]
        out.append(NStats(n, len(group), gm[0], gm[1], ze[0], ze[1],
                          tuple(m for m, _ in inner), tuple(e for _, e in inner),
                          sum(s.sfo for s in group), sum(s.lmo for s in group)))
    return out


def rate_fits(stats: Sequence[NStats], T: int, min_reps: int = 20) -> dict:
    """Log-log fits of every per-N mean; ``None`` where the data cannot support one."""
    series = {"grad_map_sq": [(s.n_iters, s.grad_map_mean, s.replications) for s in stats],
              "z_err_sq": [(s.n_iters, s.z_err_mean, s.replications) for s in stats]}
    for i in range(T):
        series[f"inner_err_{i + 1}"] = [(s.n_iters, s.inner_err_mean[i], s.replications)
                                        for s in stats]
    fits = {}
    for name, pts in series.items():
        if any(p[1] is None for p in pts):
            fits[name] = None
            continue
        try:
            slope, intercept, r2 = rate_fit(pts, min_reps=min_reps)
        except DataError:
            fits[name] = None
        else:
            fits[name] = {"slope": slope, "intercept": intercept, "r2": r2}
    return fits


@dataclass
class AggregateReport:
    config: ExperimentConfig
    T: int
    stats: list
    fits: dict
    runs: list
    complete: bool = True
    version: str = VERSION_STRING
    schema_version: int = SCHEMA_VERSION
    wall_clock_s: Optional[float] = None
    traces: dict = field(default_factory=dict, repr=False, compare=False)

    def stats_for(self, n_iters: int) -> NStats:
        for s in self.stats:
            if s.n_iters == n_iters:
                return s
        raise KeyError(n_iters)

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        d = {
            "schema_version": self.schema_version,
            "version": self.version,
            "config": self.config.to_dict(),
            "T": self.T,
            "complete": self.complete,
            "seeds": {"master_seed": self.config.master_seed,
                      "data_seed": self.config.data_seed,
                      "derivation": "derive_seed(master_seed, N, r)"},
            "stats": [s.to_dict() for s in self.stats],
            "fits": self.fits,
            "runs": [r.to_dict() for r in self.runs],
        }
        if include_wall_clock:
            d["timing"] = {"wall_clock_s": self.wall_clock_s}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(
            config=ExperimentConfig.from_dict(d["config"]),
            T=d["T"],
            stats=[NStats.from_dict(s) for s in d["stats"]],
            fits=d["fits"],
            runs=[RunSummary.from_dict(r) for r in d["runs"]],
            complete=d["complete"],
            version=d["version"],
            schema_version=d["schema_version"],
            wall_clock_s=d.get("timing", {}).get("wall_clock_s"),
        )


def _execute(cfg: ExperimentConfig, cells: list, diagnose) -> tuple:
    """Run cells until done or the first failure; returns (results, aborted)."""
    results = []
    if cfg.workers == 1:
        for n, r in cells:
            summary, trace = run_cell(cfg, n, r, diagnose)
            results.append((summary, trace))
            if summary.status != "ok":
                return results, True
        return results, False
    aborted = False
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(_run_cell_task, (cfg, n, r, diagnose)) for n, r in cells]
        for fut in futures:
            if aborted:
                fut.cancel()
                continue
            summary, trace = fut.result()
            results.append((summary, trace))
            if summary.status != "ok":
                aborted = True
    return results, aborted


def run_experiment(cfg: ExperimentConfig, diagnose=True) -> AggregateReport:
    """Run every ``(N, r)`` cell and aggregate the at-R diagnostics.

    A failing cell aborts the remaining ones; the report then keeps the
    finished runs, includes the failure and has ``complete = False``.
    """
    bench = cfg.validate()
    T = bench.problem.T
    cells = [(n, r) for n in cfg.n_values for r in range(cfg.replications)]
    start = time.perf_counter()
    results, aborted = _execute(cfg, cells, diagnose)
    wall = time.perf_counter() - start
    results.sort(key=lambda sr: (sr[0].n_iters, sr[0].replication))
    runs = [s for s, _ in results]
    traces = {(s.n_iters, s.replication): tr for s, tr in results if tr is not None}
    stats = aggregate(runs, T)
    return AggregateReport(cfg, T, stats, rate_fits(stats, T), runs, complete=not aborted,
                           wall_clock_s=wall, traces=traces)


def _open_for_write(path: str, mode: str = "w"):
    try:
        return open(path, mode, newline="", encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def write_trace_csv(path: str, trace: Sequence[TraceRecord], T: int):
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(T))
        for rec in trace:
            w.writerow(trace_row(rec, T))


def read_trace_csv(path: str) -> list:
    """Parse a trace CSV back into ``TraceRecord`` objects."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    T = len(header) - 9

    def num(s, kind=float):
        return None if s == "" else kind(s)

    out = []
    for row in body:
        out.append(TraceRecord(
            k=int(row[0]), tau=float(row[1]), t_icg=int(row[2]),
            sfo=int(row[-2]), lmo=int(row[-1]),
            grad_map_sq=num(row[3]), fw_gap=num(row[4]), z_err_sq=num(row[5]),
            inner_err=tuple(num(v) for v in row[6:6 + T]), H_gap=num(row[6 + T])))
    return out


def write_summary_csv(path: str, report: AggregateReport):
    T = report.T
    header = (["N", "replications", "grad_map_mean", "grad_map_se", "z_err_mean", "z_err_se"]
              + [f"inner_err_{i}_{s}" for i in range(1, T + 1) for s in ("mean", "se")]
              + ["sfo_total", "lmo_total"])
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in report.stats:
            inner = [v for i in range(T) for v in (s.inner_err_mean[i], s.inner_err_se[i])]
            w.writerow([_cell(v) for v in (s.n_iters, s.replications, s.grad_map_mean,
                                           s.grad_map_se, s.z_err_mean, s.z_err_se,
                                           *inner, s.sfo_total, s.lmo_total)])


def trace_filename(n_iters: int, replication: int, ext: str) -> str:
    return f"trace_N{n_iters}_r{replication:04d}.{ext}"


def emit(report: AggregateReport, out_dir: str, fmt: Optional[str] = None) -> list:
    """Write the report (and kept traces) under ``out_dir``; returns the paths.

    ``report.json`` always holds the aggregate with config echo and seed
    provenance.  With ``csv`` each kept trace becomes one CSV file and the
    per-N table goes to ``summary.csv``; with ``json`` traces are written to
    ``traces.json``.  Wall-clock time lives in ``timing.json`` only, so every
    other file is reproducible byte for byte.
    """
    fmt = fmt or report.config.format
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {', '.join(FORMATS)}")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create {out_dir}: {exc}") from exc
    paths = []

    def dump_json(name, obj):
        path = os.path.join(out_dir, name)
        with _open_for_write(path) as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
        paths.append(path)

    dump_json("report.json", report.to_dict(include_wall_clock=False))
    dump_json("timing.json", {"wall_clock_s": report.wall_clock_s})
    if fmt == "csv":
        path = os.path.join(out_dir, "summary.csv")
        write_summary_csv(path, report)
        paths.append(path)
        for (n, r), trace in sorted(report.traces.items()):
            path = os.path.join(out_dir, trace_filename(n, r, "csv"))
            write_trace_csv(path, trace, report.T)
            paths.append(path)
    elif report.traces:
        dump_json("traces.json", [
            {"N": n, "replication": r, "records": [record_to_dict(rec) for rec in trace]}
            for (n, r), trace in sorted(report.traces.items())])
    return paths


def load_report(out_dir: str) -> AggregateReport:
    with open(os.path.join(out_dir, "report.json"), encoding="utf-8") as fh:
        d = json.load(fh)
    timing = os.path.join(out_dir, "timing.json")
    if os.path.exists(timing):
        with open(timing, encoding="utf-8") as fh:
            d["timing"] = json.load(fh)
    return AggregateReport.from_dict(d)


# ------------------------------------------------------------ quantile study

@dataclass
class QuantileTable:
    """Empirical ``(1 - delta)``-quantiles of ``min_k ||G||^2`` across replications."""

    n_values: tuple
    deltas: tuple
    quantiles: dict  # (N, delta) -> quantile
    samples: dict = field(default_factory=dict, repr=False)  # N -> per-replication minima

    def quantile(self, n_iters: int, delta: float) -> float:
        return self.quantiles[(n_iters, delta)]

    def ratio(self, n_small: int, n_large: int, delta: float) -> float:
        return self.quantile(n_small, delta) / self.quantile(n_large, delta)

    def rows(self) -> list:
        return [(n, dl, self.quantiles[(n, dl)]) for n in self.n_values for dl in self.deltas]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "rows": [{"N": n, "delta": dl, "quantile": q} for n, dl, q in self.rows()],
                "fit": fit_quantile_law(self.rows())}


def empirical_quantiles(values: Sequence[float], deltas: Sequence[float]) -> dict:
    """``(1 - delta)``-quantile for each ``delta`` (linear interpolation)."""
    arr = np.asarray(values, dtype=float)
    out = {}
    for dl in deltas:
        if not 0.0 <= dl <= 1.0:
            raise ConfigError(f"delta must lie in [0, 1], got {dl}")
        out[dl] = float(np.quantile(arr, 1.0 - dl))
    return out


def quantile_study(cfg: ExperimentConfig, deltas: Sequence[float]) -> QuantileTable:
    """Quantiles of the best gradient-mapping norm along each trajectory."""
    if cfg.algorithm != "asa1":
        raise ConfigError("quantile_study runs asa1 only")
    if cfg.replications < MIN_QUANTILE_REPS:
        raise StatisticalPowerError(
            f"quantile_study needs at least {MIN_QUANTILE_REPS} replications, got {cfg.replications}")
    bench = cfg.validate()
    if not bench.problem.has_exact:
        raise ConfigError("quantile_study needs exact diagnostics")
    deltas = tuple(float(dl) for dl in deltas)
    if not deltas:
        raise ConfigError("at least one delta is required")
    lean = ExperimentConfig.from_dict({**cfg.to_dict(), "keep_traces": False})
    cells = [(n, r) for n in cfg.n_values for r in range(cfg.replications)]
    results, aborted = _execute(lean, cells, "grad_map")
    if aborted:
        failed = next(s for s, _ in results if s.status != "ok")
        raise StocgError(f"quantile_study aborted at N={failed.n_iters} r={failed.replication}: "
                         f"{failed.error}")
    results.sort(key=lambda sr: (sr[0].n_iters, sr[0].replication))
    samples, table = {}, {}
    for n in cfg.n_values:
        mins = [s.min_grad_map_sq for s, _ in results if s.n_iters == n]
        samples[n] = mins
        for dl, q in empirical_quantiles(mins, deltas).items():
            table[(n, dl)] = q
    return QuantileTable(cfg.n_values, deltas, table, samples)


def fit_quantile_law(rows: Sequence) -> dict:
    """Fit ``log q = a + b log N + c log log(1/delta)`` by least squares.

    Rows with ``delta`` outside ``(0, 1)`` are ignored.  A law
    ``q = C log(1/delta)^c / N^(-b)`` is recovered exactly.  When only one N
    (or one delta) is present the corresponding exponent is ``None``.
    """
    pts = [(float(n), float(dl), float(q)) for n, dl, q in rows if 0.0 < dl < 1.0]
    if any(q <= 0 for _, _, q in pts):
        raise DataError("quantiles must be positive to fit a power law")
    ns = sorted({p[0] for p in pts})
    ds = sorted({p[1] for p in pts})
    cols, names = [np.ones(len(pts))], ["intercept"]
    if len(ns) > 1:
        cols.append(np.log([p[0] for p in pts]))
        names.append("n_exponent")
    if len(ds) > 1:
        cols.append(np.log(np.log(1.0 / np.array([p[1] for p in pts]))))
        names.append("log_delta_exponent")
    result = {"intercept": None, "n_exponent": None, "log_delta_exponent": None}
    if not pts:
        return result
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), np.log([p[2] for p in pts]), rcond=None)
    for name, c in zip(names, coef):
        result[name] = float(c)
    return result
