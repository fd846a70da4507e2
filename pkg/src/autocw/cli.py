"""Command line: one subcommand per pipeline stage, plus ``all``.

Exit codes: 0 ok, 1 usage or malformed config, 2 runtime error, 3 missing input.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_config
from .pipeline import STAGES, MissingInput, Runner, UnknownCondition

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_MISSING = 0, 1, 2, 3
OUT_ENV = "AUTOCW_OUT"

log = logging.getLogger("autocw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="sectioned key = value config file")
    common.add_argument("--set", metavar="K=V", action="append", default=[], dest="overrides",
                        help="override section.key=value (repeatable)")
    common.add_argument("--out", metavar="DIR",
                        help=f"output root (default: ${OUT_ENV} or ./autocw_out)")
    common.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    common.add_argument("--jobs", type=int, help="parallel candidate trainings (overrides run.jobs)")
    common.add_argument("--condition", metavar="NAME", help="restrict to one condition, e.g. t60_780ms")
    common.add_argument("--force", action="store_true", help="rebuild even if stamps say up to date")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="autocw", description="Gradient-guided context-window composition pipeline.")
    sub = parser.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    for stage in STAGES + ("all",):
        sub.add_parser(stage, parents=[common])
    sub.add_parser("show-config", parents=[common], help="print the resolved configuration")
    return parser


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.jobs is not None:
        overrides.append(f"run.jobs={args.jobs}")
    return load_config(args.config, overrides)


def pipeline_stages(cfg) -> list[str]:
    stages = ["gen", "ir", "contaminate", "features", "train", "probe", "compose", "xcorr", "autocw"]
    if cfg.search.run_grid:
        stages.append("grid")
    return stages + ["report"]


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
    except UsageError as exc:
        print(f"autocw: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"autocw: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"autocw: config file not found: {exc}", file=sys.stderr)
        return EXIT_MISSING

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    if args.stage == "show-config":
        print(cfg.to_text(), end="")
        return EXIT_OK

    out = args.out or os.environ.get(OUT_ENV) or "autocw_out"
    runner = Runner(cfg, out, force=args.force, log=log.info)
    stages = pipeline_stages(cfg) if args.stage == "all" else [args.stage]
    try:
        for stage in stages:
            runner.run_stage(stage, args.condition if stage not in ("gen", "report") else None)
    except MissingInput as exc:
        print(f"autocw: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except UnknownCondition as exc:
        print(f"autocw: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any stage failure is a runtime error
        log.debug("stage failure", exc_info=True)
        print(f"autocw: {args.stage} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
