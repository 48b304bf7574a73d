"""Command line entry point: ``cycletrail <stage> --config run.toml``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import CycleTrailError, InputError, RemoteError
from .pipeline import (
    RunConfig, cmd_derive, cmd_enrich, cmd_evaluate, cmd_match, cmd_pipeline, cmd_preprocess,
)

EXIT_OK, EXIT_FAILURE, EXIT_INPUT, EXIT_REMOTE = 0, 1, 2, 3

STAGES = {
    "preprocess": cmd_preprocess,
    "match": cmd_match,
    "enrich": cmd_enrich,
    "derive": cmd_derive,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycletrail", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in STAGES.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", required=True, type=Path, help="TOML run configuration")
        p.add_argument("--workers", type=int, help="override the configured worker count")
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("--summary", action="store_true", help="print the stage summary as JSON")
        if name in ("evaluate", "pipeline"):
            p.add_argument("--truth", type=Path, help="ground-truth route file")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_toml(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise InputError("--workers must be at least 1")
            cfg.workers = args.workers
        if getattr(args, "truth", None) is not None:
            cfg.truth_path = args.truth.resolve()
        if args.command == "evaluate":
            summary = cmd_evaluate(cfg, cfg.truth_path)
        else:
            summary = STAGES[args.command](cfg)
    except InputError as exc:
        print(f"cycletrail: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RemoteError as exc:
        print(f"cycletrail: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except CycleTrailError as exc:
        print(f"cycletrail: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.summary:
        print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
