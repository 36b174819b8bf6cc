"""Figures for experiment reports.

matplotlib is an optional dependency; it is imported only when a figure is
requested, and always with the non-interactive Agg backend.
"""
from __future__ import annotations

import math
import os

from .errors import ConfigError


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise ConfigError("figures need matplotlib; install the 'plot' extra") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    try:
        fig.savefig(path, dpi=120, bbox_inches="tight")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def rate_figure(report, path: str) -> str:
    """Log-log plot of the per-N means with standard-error bars and fitted lines."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ns = [s.n_iters for s in report.stats]
    series = [("grad_map_sq", [s.grad_map_mean for s in report.stats],
               [s.grad_map_se for s in report.stats])]
    for i in range(report.T):
        series.append((f"inner_err_{i + 1}", [s.inner_err_mean[i] for s in report.stats],
                       [s.inner_err_se[i] for s in report.stats]))
    for name, means, ses in series:
        if any(m is None or m <= 0 for m in means):
            continue
        yerr = [0.0 if e is None else e for e in ses]
        line = ax.errorbar(ns, means, yerr=yerr, marker="o", capsize=3, label=name)
        fit = report.fits.get(name)
        if fit:
            xs = [min(ns), max(ns)]
            ys = [math.exp(fit["intercept"]) * x ** fit["slope"] for x in xs]
            ax.plot(xs, ys, "--", color=line[0].get_color(), alpha=0.7,
                    label=f"slope {fit['slope']:.2f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("mean at output iterate")
    cfg = report.config
    ax.set_title(f"{cfg.algorithm} on {cfg.problem}, beta={cfg.beta:g}")
    ax.legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)
    return path


def trace_figure(trace, path: str, title: str = "") -> str:
    """Per-iteration diagnostics of one run on a log scale."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ks = [r.k for r in trace]
    for name in ("grad_map_sq", "fw_gap", "z_err_sq"):
        vals = [getattr(r, name) for r in trace]
        if all(v is not None for v in vals):
            ax.plot(ks, [max(v, 1e-300) for v in vals], label=name)
    ax.set_yscale("log")
    ax.set_xlabel("k")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)
    return path


def quantile_figure(table, path: str) -> str:
    """Quantile of the best squared gradient mapping against N, one line per delta."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for dl in table.deltas:
        qs = [table.quantile(n, dl) for n in table.n_values]
        if all(q > 0 for q in qs):
            ax.plot(table.n_values, qs, marker="o", label=f"delta={dl:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("(1 - delta)-quantile of min_k ||G||^2")
    ax.legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)
    return path


def report_figures(report, out_dir: str) -> list:
    """Write the rate figure (when there are at least two N) and one trace figure."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if len(report.stats) >= 2:
        paths.append(rate_figure(report, os.path.join(out_dir, "rate.png")))
    if report.traces:
        (n, r), trace = sorted(report.traces.items())[-1]
        paths.append(trace_figure(trace, os.path.join(out_dir, f"trace_N{n}_r{r:04d}.png"),
                                  f"N={n}, replication {r}"))
    return paths
