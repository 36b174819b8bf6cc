"""Command-line entry point: ``stocg run ...`` and ``stocg quantiles ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
Set ``STOCG_LOG`` (e.g. ``DEBUG``) to control log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import ConfigError, InvariantError, NumericalDomainError, StocgError
from .experiment import ExperimentConfig, emit, quantile_study, run_experiment

log = logging.getLogger("stocg")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def load_params(path, overrides):
    """Problem parameters from a JSON file, updated by ``key=value`` overrides."""
    params = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                params = json.load(fh)
        except OSError as exc:
            raise IOError(f"cannot read {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(params, dict):
            raise ConfigError(f"{path} must hold a JSON object")
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        params[key] = _parse_value(value)
    return params


def _common(p):
    p.add_argument("--problem", required=True, help="meandev, twolevel, quadbox or quadball")
    p.add_argument("--set", dest="set_spec", default=None,
                   help="feasible set, e.g. l1:1.0, l2:2.0, simplex:1.0, box:0:1 (default: the problem's)")
    p.add_argument("--n", type=_int_list, default=[100], help="comma-separated iteration counts N")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.0, help="LMO slack factor inside ICG")
    p.add_argument("--reps", type=int, default=1, help="replications per N")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", default="stocg-out", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--params", default=None, help="JSON file with problem parameters")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="problem parameter override (repeatable)")
    p.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")


def build_parser():
    parser = argparse.ArgumentParser(prog="stocg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="rate study: seeded replications at several N")
    _common(p)
    p.add_argument("--algo", required=True, choices=["linasa", "nasa2", "asa1"])
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--lean-sfo", action="store_true",
                   help="skip value samples the algorithm does not use")
    p.add_argument("--no-traces", action="store_true", help="write only the aggregate")

    q = sub.add_parser("quantiles", help="high-probability study of min_k ||G||^2 (asa1)")
    _common(q)
    q.add_argument("--levels", type=_float_list, default=[0.5, 0.1, 0.05],
                   help="comma-separated delta values; the (1 - delta)-quantile is reported")
    return parser


def _configure_logging():
    level = os.environ.get("STOCG_LOG", "WARNING").upper()
    numeric = getattr(logging, level, None)
    if not isinstance(numeric, int):
        numeric = int(level) if level.isdigit() else logging.WARNING
    logging.basicConfig(level=numeric, format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args):
    cfg = ExperimentConfig(
        problem=args.problem, algorithm=args.algo, set_spec=args.set_spec,
        n_values=tuple(args.n), beta=args.beta, delta=args.delta, replications=args.reps,
        master_seed=args.seed, output=args.out, format=args.format, workers=args.workers,
        problem_params=load_params(args.params, args.param), lean_sfo=args.lean_sfo,
        keep_traces=not args.no_traces)
    report = run_experiment(cfg)
    paths = emit(report, args.out, args.format)
    if args.figures:
        from .plotting import report_figures
        paths += report_figures(report, args.out)
    for s in report.stats:
        print(f"N={s.n_iters:<7d} reps={s.replications:<4d} mean ||G||^2 at R = {s.grad_map_mean}")
    fit = report.fits.get("grad_map_sq")
    if fit:
        print(f"log-log slope {fit['slope']:.3f} (r^2 {fit['r2']:.3f})")
    print(f"wrote {len(paths)} files to {args.out}")
    if not report.complete:
        failed = [r for r in report.runs if r.status != "ok"]
        print(f"aborted after failure: {failed[0].error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_quantiles(args):
    cfg = ExperimentConfig(
        problem=args.problem, algorithm="asa1", set_spec=args.set_spec,
        n_values=tuple(args.n), beta=args.beta, delta=args.delta, replications=args.reps,
        master_seed=args.seed, output=args.out, workers=args.workers,
        problem_params=load_params(args.params, args.param), keep_traces=False)
    table = quantile_study(cfg, args.levels)
    try:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "quantiles.json"), "w", encoding="utf-8") as fh:
            json.dump({"config": cfg.to_dict(), **table.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IOError(f"cannot write to {args.out}: {exc}") from exc
    if args.figures:
        from .plotting import quantile_figure
        quantile_figure(table, os.path.join(args.out, "quantiles.png"))
    for n, dl, q in table.rows():
        print(f"N={n:<7d} delta={dl:<6g} quantile={q:.6g}")
    return EXIT_OK


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "quantiles": cmd_quantiles}[args.command]
    try:
        return handler(args)
    except (NumericalDomainError, InvariantError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StocgError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
