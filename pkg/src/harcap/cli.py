"""Command-line entry point: ``harcap keyframes|build-captions|evaluate|split|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import runner
from .config import load_config
from .errors import ConfigError, HarcapError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--parallelism", type=int, help="worker count (default from config, 4)")
    p.add_argument("--cache-dir", help="provider response cache directory")
    p.add_argument("--out", help="output directory for artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harcap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keyframes", help="select keyframes for every manifest video")
    _common(p)
    p = sub.add_parser("build-captions", help="generate keyword-verified ground-truth captions")
    _common(p)
    p = sub.add_parser("evaluate", help="caption test videos with a candidate model and score them")
    _common(p)
    p.add_argument("--model", required=True, help="candidate name from the [candidates] tables")
    p.add_argument("--protocol", action="append", choices=["CS", "CV", "phase1", "all"],
                   help="evaluation set(s); repeatable (default from config)")
    p = sub.add_parser("split", help="write train/test manifests for the benchmark protocols")
    _common(p)
    p.add_argument("--protocol", default="all", choices=["CS", "CV1", "CV2", "phase1", "all"])
    p = sub.add_parser("report", help="tabulate Mean Class Accuracy from verdict files")
    _common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.parallelism is not None and args.parallelism < 1:
            raise ConfigError("--parallelism must be >= 1")
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, parallelism=args.parallelism, cache_dir=args.cache_dir, out=args.out)
        if args.command == "keyframes":
            result = runner.cmd_keyframes(cfg)
        elif args.command == "build-captions":
            result = runner.cmd_build_captions(cfg)
        elif args.command == "evaluate":
            result = runner.cmd_evaluate(cfg, args.model, protocols=args.protocol)
        elif args.command == "split":
            result = runner.cmd_split(cfg, args.protocol)
        else:
            result = runner.cmd_report(cfg)
    except (HarcapError, OSError) as exc:
        print(f"harcap: error: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG

    if args.command == "report":
        print(result.summary["table"])
    else:
        print(json.dumps(result.summary, indent=2, sort_keys=True))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
