"""Command line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import PipelineError
from .pipeline import STAGES, RunConfig, run_all, run_stage


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--output-dir", help="artifact directory (overrides config)")
    p.add_argument("--input", action="append", dest="inputs", metavar="FILE",
                   help="input sighting file; repeatable (overrides config)")
    p.add_argument("--month", help="study month as YYYY-MM")
    p.add_argument("--n", type=int, help="number of top-visited cells in the dedup key")
    p.add_argument("--min-sightings", type=int, help="monthly sighting floor per device")
    p.add_argument("--validation-sample", type=int, help="pairs sampled for validation")
    p.add_argument("--seed", type=int, help="master seed for sampling and synthesis")
    p.add_argument("--workers", type=int, help="worker process count")


def _build_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig()
    overrides = {}
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.inputs:
        overrides["inputs"] = tuple(args.inputs)
    if args.month is not None:
        overrides["month"] = args.month
    if args.n is not None:
        overrides["n"] = args.n
    if args.min_sightings is not None:
        overrides["min_sightings"] = args.min_sightings
    if args.validation_sample is not None:
        overrides["validation_sample"] = args.validation_sample
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = RunConfig.from_dict(d)
    return cfg.validate()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mdld-dedup",
        description="Detect and merge duplicate device ids in multi-vendor "
        "mobile device location data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sp = sub.add_parser(name, help=f"run the {name} stage")
        _add_common(sp)
    sp = sub.add_parser("run", help="run every configured stage in order")
    _add_common(sp)

    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
        if args.command == "run":
            results = run_all(cfg)
        else:
            results = {args.command: run_stage(args.command, cfg)}
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    for stage, summary in results.items():
        compact = json.dumps(summary, sort_keys=True, default=str)
        if len(compact) > 200:
            compact = compact[:197] + "..."
        print(f"[{stage}] {compact}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
