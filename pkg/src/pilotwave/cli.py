"""Command-line entry point: ``pilotwave run|spectrum|trajectories|classical|diagnose``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pilotwave import __version__
from pilotwave.config import ConfigError, override_seed, parse_config
from pilotwave.runner import (
    EXIT_CONFIG,
    EXIT_DIAGNOSTICS,
    EXIT_PASS,
    EXIT_RUNTIME,
    RunError,
    default_out_dir,
    diagnose_run,
    run_scenario,
)

SCENARIO_COMMANDS = ("run", "spectrum", "trajectories", "classical")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="output directory (default ./runs/<name>-<hash>)")
    common.add_argument("--seed", type=_u64, help="override every random seed in the config")
    common.add_argument("--threads", type=_positive, default=1, help="parallelism cap (default 1)")
    common.add_argument("--quiet", action="store_true", help="print nothing but errors")

    parser = argparse.ArgumentParser(prog="pilotwave", description="Pilot-wave and Madelung-flow scenarios.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "run every stage present in the config",
        "spectrum": "lowest eigenpairs of the configured potential",
        "trajectories": "evolve and integrate the particle ensemble",
        "classical": "Hamilton flow, variations and Lyapunov estimates",
    }
    for name in SCENARIO_COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        p.add_argument("config", type=Path, help="scenario YAML file")
    p = sub.add_parser("diagnose", parents=[common], help="recompute diagnostics of a finished run")
    p.add_argument("run_dir", type=Path)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    say = (lambda *a, **k: None) if args.quiet else print

    if args.command == "diagnose":
        try:
            res = diagnose_run(args.run_dir, threads=args.threads)
        except (OSError, ConfigError, RunError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        say(res.report.summary(), end="")
        if not res.matches:
            print("diagnostics differ from the stored report:", file=sys.stderr)
            for d in res.differences:
                print(d, file=sys.stderr)
            return EXIT_DIAGNOSTICS
        say("recomputed diagnostics match the stored report")
        return EXIT_PASS if res.report.passed else EXIT_DIAGNOSTICS

    try:
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = override_seed(cfg, args.seed)
    out = args.out or default_out_dir(cfg)
    try:
        result = run_scenario(cfg, out, command=args.command, threads=args.threads)
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    m = result.manifest
    say(result.report.summary(), end="")
    if args.quiet:
        for e in m.errors:
            print(f"error: {e['type']}: {e['message']}", file=sys.stderr)
    say(f"artifacts: {out}")
    return m.exit_code if m.exit_code in (EXIT_PASS, EXIT_DIAGNOSTICS, EXIT_CONFIG) else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
