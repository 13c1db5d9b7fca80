"""Command-line entry point for the experiment harness."""

from __future__ import annotations

import argparse
import sys

from .harness import BudgetError, ConfigError, cmd_partitions, cmd_rates, \
    cmd_reference, cmd_run, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdhg-bench",
        description="Stochastic primal-dual experiment driver (synthetic parallel-MRI benchmark)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, hlp in [
        ("run", "averaged convergence curves per sampling scheme"),
        ("partitions", "rate sweep over every partition at one batch size"),
        ("rates", "per-batch-size rate distributions (block-serial vs b-nice)"),
        ("reference", "persist the instance and its long-run reference"),
    ]:
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for averaged runs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed=args.seed)
        if args.command == "run":
            return cmd_run(config, args.out, jobs=args.jobs)
        if args.command == "partitions":
            return cmd_partitions(config, args.out)
        if args.command == "rates":
            return cmd_rates(config, args.out)
        return cmd_reference(config, args.out)
    except (ConfigError, BudgetError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
