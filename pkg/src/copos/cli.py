"""Command-line entry point.

    copos run --config experiment.cfg [--seed N] [--out DIR]
    copos oracle --suite dual_fd|dual_mc|toy_closed_form|brute_force_tr|dense_fisher|all
    copos toy --preset fig1-top|fig1-bottom --out DIR
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copos")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)

    p_oracle = sub.add_parser("oracle", help="run a verification-oracle suite")
    p_oracle.add_argument("--suite", required=True)
    p_oracle.add_argument("--out", default=None, help="optional JSON report path")

    p_toy = sub.add_parser("toy", help="emit the quadratic-bandit panel series")
    p_toy.add_argument("--preset", required=True,
                       choices=["fig1-top", "fig1-bottom"])
    p_toy.add_argument("--out", required=True)
    p_toy.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = harness.load_config(args.config)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            if args.out is not None:
                cfg = replace(cfg, out_dir=args.out)
            run_dir = harness.run_experiment(cfg)
            print(run_dir)
            return 0
        if args.command == "oracle":
            report = harness.run_oracles(args.suite)
            print(harness.write_report(report, args.out))
            return 0 if report["passed"] else 1
        if args.command == "toy":
            out = harness.run_toy_preset(args.preset, args.out, seed=args.seed)
            print(out)
            return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
