"""Command-line front door: calibrate, run, compare, version.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config errors.
Set the GRIPLAB_LOG environment variable (DEBUG/INFO/WARNING) for verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .configio import ConfigFileError, load_config
from .harness import compare_conditions, run_experiment
from .reactive import CalibrationError, calibrate, load_force_samples, save_calibration
from .reporting import write_comparison, write_manifest, write_report

log = logging.getLogger("griplab")

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _setup_logging() -> None:
    level = os.environ.get("GRIPLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def cmd_calibrate(args: argparse.Namespace) -> int:
    try:
        samples = load_force_samples(args.samples_csv)
        cal = calibrate(samples, force_scale=args.force_scale)
    except (CalibrationError, OSError, ValueError) as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return USAGE_ERROR
    save_calibration(args.out, cal)
    print(
        f"thresholds ({cal.firm_threshold:.2f}, {cal.slip_threshold:.2f}), "
        f"alpha_des={cal.alpha_des:.2f} -> {args.out}"
    )
    return 0


def _load_run_config(args: argparse.Namespace):
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed, seeds=None)
    if args.trials is not None:
        config = replace(config, n_trials=args.trials, seeds=None)
    if args.jobs is not None:
        config = replace(config, n_jobs=args.jobs)
    if args.no_reactive:
        config = replace(config, reactive_enabled=False)
    return config


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _load_run_config(args)
    except (ConfigFileError, OSError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return USAGE_ERROR
    out_dir = Path(args.out)
    write_manifest(out_dir, str(args.config), config.master_seed)
    try:
        report = run_experiment(config)
    except Exception as exc:  # runtime failure, not a usage problem
        print(f"run failed: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    write_report(out_dir, report, config_path=str(args.config))
    n = len(report.outcomes)
    print(
        f"success={round(report.success_rate * n)}/{n} "
        f"slip={round(report.slip_rate * n)}/{n}"
    )
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    if len(args.configs) < 2:
        print("compare needs at least two configs", file=sys.stderr)
        return USAGE_ERROR
    try:
        configs = [load_config(p) for p in args.configs]
        if args.seed is not None:
            configs = [replace(c, master_seed=args.seed, seeds=None) for c in configs]
        if args.jobs is not None:
            configs = [replace(c, n_jobs=args.jobs) for c in configs]
    except (ConfigFileError, OSError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        rows = compare_conditions(configs)
    except ValueError as exc:
        print(f"cannot compare: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:
        print(f"comparison failed: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    path = write_comparison(Path(args.out), rows)
    print(f"{'condition':<14} {'success_rate':>12} {'slip_rate':>10}")
    for row in rows:
        print(f"{row.condition.value:<14} {row.success_rate:>12.2f} {row.slip_rate:>10.2f}")
    print(f"-> {path}")
    return 0


def cmd_version(_: argparse.Namespace) -> int:
    print(f"griplab {__version__}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="griplab",
        description="Slip-safe policy-learning experiments on a simulated hand.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="derive slip-class thresholds from labeled forces")
    p.add_argument("samples_csv", help="CSV with columns f1,f2,f3,label")
    p.add_argument("out", help="output calibration file")
    p.add_argument("--force-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config", help="experiment config file")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default="runs/run", help="output directory")
    p.add_argument("--trials", type=int, default=None, help="override the trial count")
    p.add_argument("--jobs", type=int, default=None, help="parallel trial workers")
    p.add_argument("--no-reactive", action="store_true",
                   help="disable the reflex loop regardless of condition")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several conditions and rank them")
    p.add_argument("configs", nargs="*", help="two or more experiment config files")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="runs/compare")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("version", help="print the tool version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
