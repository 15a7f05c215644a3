"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .harness import (replay_summary, run_monte_carlo, run_sweep,
                      summarize_and_export, validate_battery)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to a key=value config file")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)


def _resolved(args) -> "ExperimentConfig":
    cfg = load_config(args.config)
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.replicates is not None:
        overrides["n_replicates"] = args.replicates
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        cfg = replace(cfg, **overrides)
        cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="surveilsim")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one Monte Carlo experiment")
    _add_common(p_run)
    p_sweep = sub.add_parser("sweep", help="cross product over budgets and risk scales")
    _add_common(p_sweep)
    p_val = sub.add_parser("validate", help="run the invariant self-test battery")
    p_val.add_argument("--threads", type=int, default=1)
    p_rep = sub.add_parser("replay", help="re-summarize finals/designs from raw logs")
    p_rep.add_argument("--out", required=True, help="directory holding exported CSVs")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = _resolved(args)
            summary = run_monte_carlo(cfg)
            hashes = summarize_and_export(summary, cfg.out_dir)
            for name, h in sorted(hashes.items()):
                print(f"{name}  sha256={h[:16]}…")
            return EXIT_OK
        if args.command == "sweep":
            cfg = _resolved(args)
            cells = run_sweep(cfg, cfg.out_dir)
            print(f"wrote {len(cells)} sweep cells under {cfg.out_dir}")
            return EXIT_OK
        if args.command == "validate":
            failures = 0
            for name, ok, detail in validate_battery(threads=args.threads):
                print(f"[{'ok' if ok else 'FAIL'}] {name}: {detail}")
                failures += 0 if ok else 1
            return EXIT_OK if failures == 0 else EXIT_INVARIANT
        if args.command == "replay":
            paths = replay_summary(args.out)
            for kind, p in sorted(paths.items()):
                print(f"{kind}: {p}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
