#!/usr/bin/env python3
"""Run the full benchmark sweep (all models, x in {4,8,16,32}, all modes) and
write results plus per-configuration schedules and Gantt charts."""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from cimsched.bench import SweepConfig, format_table, run_sweep  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--sets-per-layer", type=int, default=None,
                        help="override the scheduling granularity")
    parser.add_argument("--solver", choices=("greedy", "exact"), default="greedy")
    parser.add_argument("--no-artifacts", action="store_true")
    args = parser.parse_args()

    overrides = {}
    if args.sets_per_layer is not None:
        overrides["sets_per_layer"] = args.sets_per_layer
    config = SweepConfig(out_dir=args.out, solver=args.solver,
                         emit_artifacts=not args.no_artifacts, **overrides)
    rows = run_sweep(config)
    print(format_table(rows))
    print(f"\nwrote {args.out}/results.csv and {args.out}/results.json")


if __name__ == "__main__":
    main()
