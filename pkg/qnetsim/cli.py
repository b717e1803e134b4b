from typing import Optional, Sequence
import argparse
import os
import sys

from .device import load_device_config
from .experiments import EXPERIMENT_NAMES, EXPERIMENTS, UnknownExperimentError
from .logger import logger
from .report import emit_report
from .scenarios import load_scenario, run_scenario


EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def _default_jobs() -> int:
    raw = os.environ.get("QNETSIM_JOBS", "").strip()
    if raw == "":
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring QNETSIM_JOBS={raw!r}; expected an integer")
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnetsim", description="Two-node superconducting quantum network simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="Run a scenario file.")
    run.add_argument("scenario", help="Scenario JSON file.")
    run.add_argument("--out", default=None, help="Output directory (default: the scenario's output_dir).")
    run.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
    run.add_argument("--jobs", type=int, default=None, help="Worker processes over grid points (default: $QNETSIM_JOBS or 1).")
    run.add_argument("--force", action="store_true", help="Overwrite artifacts in a non-empty output directory.")
    report = sub.add_parser("report", help="Compare run artifacts against the reference table.")
    report.add_argument("directory")
    validate = sub.add_parser("validate", help="Validate a device config file.")
    validate.add_argument("config")
    sub.add_parser("list", help="List registered experiments.")
    return parser


def _list_experiments() -> str:
    return "\n".join(f"  {name:<14} {EXPERIMENTS[name].description}" for name in EXPERIMENT_NAMES)


def main(argv: Optional[Sequence[str]]=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            spec = load_scenario(args.scenario)
            jobs = args.jobs if args.jobs is not None else _default_jobs()
            run_scenario(spec, out=args.out, seed=args.seed, jobs=jobs, force=args.force)
        elif args.command == "report":
            text, _ = emit_report(args.directory)
            print(text)
        elif args.command == "validate":
            device = load_device_config(args.config)
            print(f"{args.config}: valid (schema_version {device.schema_version})")
        else:
            print(_list_experiments())
    except UnknownExperimentError as e:
        print(f"error: {e}\nregistered experiments:\n{_list_experiments()}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
