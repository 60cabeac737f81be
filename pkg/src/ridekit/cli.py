"""Command-line entry point: one subcommand per pipeline stage.

Every config key can be set in a TOML file (--config) and overridden by a
flag of the same name, e.g. `min_trips = 40` or `--min-trips 40`.

Exit codes: 0 success, 2 bad configuration, 3 missing stage dependency,
4 data or processing error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import RidekitError
from .config import ConfigInvalid, PipelineConfig, load_config
from .stages import STAGE_ORDER, MissingDependency, run_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_DEP = 3
EXIT_DATA = 4


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file", default=None)
    parser.add_argument("--force", action="store_true", help="recompute even if up-to-date")
    for f in dataclasses.fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar=str(f.default))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ridekit",
        description="Ride-log pipeline: sensors to road norms and driver clusters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGE_ORDER:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_config_flags(p)
    p_run = sub.add_parser("run", help="run all stages in order")
    _add_config_flags(p_run)
    p_run.add_argument(
        "--with-synth",
        action="store_true",
        help="generate the synthetic corpus first",
    )
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "run":
            stages = list(STAGE_ORDER)
            if not args.with_synth:
                stages.remove("synth")
        else:
            stages = [args.command]
        for stage in stages:
            result = run_stage(stage, cfg, force=args.force)
            print(f"[{result.stage}] {result.status}")
        return EXIT_OK
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingDependency as exc:
        print(f"missing dependency: {exc}", file=sys.stderr)
        return EXIT_MISSING_DEP
    except RidekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
