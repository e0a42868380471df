"""Command-line entry point ``mmkf``.

Exit codes: 0 success, 2 configuration error, 3 filter divergence or
numerical failure.
"""
import argparse
import json
import sys


from .exceptions import ConfigurationError, DivergenceError, MMKFError, NumericalError
from .experiments.config import builtin_configs, resolve_config
from .experiments.harness import run_forecast_experiment, run_twin_experiment
from .experiments.io import write_records

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _add_run_args(p):
    p.add_argument("--config", required=True,
                   help=f"config file, or a shipped name ({', '.join(builtin_configs())})")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--quick", action="store_true", help="use the reduced quick_cycles/quick_burn_in")
    scale.add_argument("--paper-scale", action="store_true",
                       help="use the full cycles/burn_in counts (the default)")
    p.add_argument("--out", required=True, help="output directory for records.csv and summary.json")


def build_parser():
    parser = argparse.ArgumentParser(prog="mmkf", description="Multi-model ensemble Kalman filter experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_args(sub.add_parser("assimilate", help="run a cycling data-assimilation experiment"))
    _add_run_args(sub.add_parser("forecast", help="run a forecast experiment"))
    oracle = sub.add_parser("oracle", help="check direct, iterative and BLUE fusion agree")
    oracle.add_argument("--instances", type=int, default=200)
    oracle.add_argument("--seed", type=int, default=0)
    return parser


def _run(args, expected_kind):
    cfg = resolve_config(args.config).scaled(quick=args.quick, seed=args.seed)
    if cfg.kind != expected_kind:
        raise ConfigurationError(f"config {cfg.name!r} is a {cfg.kind} experiment; "
                                 f"use 'mmkf {'forecast' if cfg.kind == 'forecast' else 'assimilate'}'")
    progress = lambda msg: print(f"[{cfg.name}] {msg}", file=sys.stderr, flush=True)
    if cfg.kind == "forecast":
        result = run_forecast_experiment(cfg, progress=progress)
    else:
        result = run_twin_experiment(cfg, progress=progress)
    csv_path, json_path = write_records(result, args.out)
    print(f"wrote {csv_path} and {json_path}")


def _oracle(args):
    from .oracle import run_oracle

    report = run_oracle(args.instances, args.seed)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle":
            return _oracle(args)
        _run(args, "assimilation" if args.command == "assimilate" else "forecast")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NumericalError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MMKFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
