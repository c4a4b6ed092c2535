"""Command-line interface.

Exit codes: 0 success, 1 invalid input (nothing is written), 2 runtime
failure (partial outputs are flushed before exiting).
"""
import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import _backend
from .errors import ConfigError, RareLWError
from .experiment import load_config, run_ensemble, run_experiment, sweep, write_trace
from .mcdo import benchmark_update_paths, write_timing_csv
from .systems import SYSTEM_NAMES, get_system, ground_truth_pdf, list_systems

logger = logging.getLogger("rarelw")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for BLAS and compiled kernels (default: all cores)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    exp = _Parser(add_help=False)
    exp.add_argument("--config", required=True, help="JSON experiment config")
    exp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted-path override, e.g. acquisition.t=1.4 (repeatable)")
    exp.add_argument("--out", default=".", help="output directory")

    parser = _Parser(prog="rarelw", description="Likelihood-weighted active learning for "
                     "rare-event response statistics.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", parents=[common, exp], help="one sequential-sampling run")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("ensemble", parents=[common, exp], help="runs over a grid of seeds")
    p.add_argument("--init-seeds", type=_ints, default=[0])
    p.add_argument("--function-seeds", type=_ints, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("sweep", parents=[common, exp], help="terminal error over a (t, alpha) grid")
    p.add_argument("--t", type=_floats, required=True, dest="t_values")
    p.add_argument("--alpha", type=_floats, required=True, dest="alpha_values")
    p.add_argument("--init-seeds", type=_ints, default=[0])
    p.add_argument("--function-seeds", type=_ints, default=None)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("bench-mcdo", parents=[common], help="time the pool-update paths")
    p.add_argument("--n-mc", type=int, default=200_000)
    p.add_argument("--n", type=_ints, default=[100, 200, 400, 800])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--out", default=".")

    p = sub.add_parser("export-pdf", parents=[common], help="ground-truth response density as CSV")
    p.add_argument("--system", required=True, choices=SYSTEM_NAMES)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--function-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=100_000)
    p.add_argument("--out", default=".")

    p = sub.add_parser("list-systems", parents=[common], help="built-in benchmark systems")
    p.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _trace_name(fmt, stem="trace"):
    return f"{stem}.{fmt}"


def _load(args):
    """Config plus its system, both validated before anything is written."""
    config = load_config(args.config, args.override)
    try:
        system = get_system(config.system.name, config.system.params, config.seeds.function)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    config.validate(system.dim)
    return config, system


def _cmd_run(args):
    config, system = _load(args)
    config.output = None
    trace = run_experiment(config, system)
    path = os.path.join(_outdir(args.out), _trace_name(args.format))
    write_trace(trace, path)
    if trace.records:
        print(f"epsilon={trace.terminal_epsilon!r}")
    if not trace.complete:
        print(f"run stopped early: {trace.error}", file=sys.stderr)
        return 2
    return 0


def _cmd_ensemble(args):
    config, _ = _load(args)
    result = run_ensemble(config, args.init_seeds, args.function_seeds, args.jobs)
    out = _outdir(args.out)
    tdir = _outdir(os.path.join(out, "traces"))
    for (fs, s), trace in sorted({**result.traces, **result.failures}.items()):
        write_trace(trace, os.path.join(tdir, _trace_name(args.format, f"f{fs}_i{s}")))
    result.to_csv(os.path.join(out, "aggregate.csv"))
    print(f"runs={result.n_runs} failures={len(result.failures)} "
          f"terminal_mean_log10={result.terminal('mean_log10')!r}")
    return 2 if result.failures else 0


def _cmd_sweep(args):
    config, _ = _load(args)
    result = sweep(config, args.t_values, args.alpha_values, args.init_seeds,
                   args.function_seeds, args.jobs)
    out = _outdir(args.out)
    result.to_csv(os.path.join(out, "sweep.csv"))
    result.to_csv(os.path.join(out, "sweep_median.csv"), which="median_log10")
    failed = sum(len(c.failures) for c in result.cells.values())
    return 2 if failed else 0


def _cmd_bench(args):
    if args.n_mc < 1 or args.repeats < 1 or not args.n or min(args.n) < 1:
        raise ConfigError("--n-mc, --repeats and every --n must be positive")
    rows = benchmark_update_paths(args.n_mc, args.n, args.repeats, args.threads, d=args.dim)
    path = os.path.join(_outdir(args.out), "timing.csv")
    write_timing_csv(rows, path)
    for r in rows:
        print(f"n={r['n']} path={r['path']} median_seconds={r['median_seconds']:.6g}")
    return 0


def _cmd_export(args):
    params = {}
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"--param {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            params[k] = v
    try:
        system = get_system(args.system, params, args.function_seed)
    except (KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if args.m < 10_000:
        raise ConfigError("--m must be at least 10000")
    truth = ground_truth_pdf(system, system.distribution, args.m, args.seed)
    path = os.path.join(_outdir(args.out), f"{args.system}_pdf.csv")
    truth.pdf.to_csv(path)
    print(path)
    return 0


def _cmd_list(args):
    systems = list_systems()
    if args.format == "json":
        print(json.dumps(systems, indent=2, default=str))
    else:
        for s in systems:
            print(f"{s['name']:<11} d={s['dim']}  {s['description']}")
    return 0


_COMMANDS = {"run": _cmd_run, "ensemble": _cmd_ensemble, "sweep": _cmd_sweep,
             "bench-mcdo": _cmd_bench, "export-pdf": _cmd_export, "list-systems": _cmd_list}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 1
    _backend.set_num_threads(args.threads)
    try:
        with threadpool_limits(limits=args.threads):
            return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    except (RareLWError, ArithmeticError, MemoryError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
