"""Command line interface.

Subcommands: validate, map, schedule, simulate, sweep, gantt.
"""
from __future__ import annotations

import argparse
import json
import sys

from .bench import (
    BENCHMARKS,
    MODES,
    SweepConfig,
    format_table,
    load_benchmark,
    run_config,
    run_sweep,
    validate_models,
)
from .gantt import emit_gantt
from .ir import prepare
from .mapping import (
    ArchConfig,
    apply_duplication,
    build_mapping,
    min_pe_requirement,
    solve_graph_duplication,
)
from .scheduling import DEFAULT_SETS_PER_LAYER


def _common_flags(parser: argparse.ArgumentParser, with_model=True):
    if with_model:
        parser.add_argument("model", help="model file path or benchmark name")
    parser.add_argument("--pe-rows", type=int, default=256, help="PE rows (M)")
    parser.add_argument("--pe-cols", type=int, default=256, help="PE columns (N)")
    parser.add_argument("--t-mvm-ns", type=float, default=1400.0,
                        help="MVM latency of one PE in nanoseconds")
    parser.add_argument("--extra-pes", type=int, default=0,
                        help="PEs beyond the minimum required (x)")
    parser.add_argument("--sets-per-layer", type=int, default=DEFAULT_SETS_PER_LAYER,
                        help="target scheduling sets per base layer")
    parser.add_argument("--mode", choices=MODES, default="xinf",
                        help="mapping/scheduling combination")
    parser.add_argument("--solver", choices=("greedy", "exact"), default="greedy",
                        help="duplication solver")
    parser.add_argument("--out", help="output file (default: stdout)")


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_validate(args) -> int:
    rows = validate_models(pe_rows=args.pe_rows, pe_cols=args.pe_cols)
    failures = 0
    for row in rows:
        status = "ok" if row.passed else "FAIL"
        print(f"[{status:>4}] {row.benchmark:<14} {row.check:<18} "
              f"expected={row.expected} actual={row.actual}")
        failures += 0 if row.passed else 1
    print(f"{len(rows) - failures}/{len(rows)} checks passed")
    return 1 if failures else 0


def _pipeline(args):
    graph = prepare(load_benchmark(args.model))
    probe = ArchConfig(pe_rows=args.pe_rows, pe_cols=args.pe_cols, t_mvm_ns=args.t_mvm_ns)
    pe_min = min_pe_requirement(graph, probe)
    arch = ArchConfig(num_pe=pe_min + args.extra_pes, pe_rows=args.pe_rows,
                      pe_cols=args.pe_cols, t_mvm_ns=args.t_mvm_ns)
    return graph, arch, pe_min


def _cmd_map(args) -> int:
    graph, arch, pe_min = _pipeline(args)
    if args.mode.startswith("wdup"):
        d = solve_graph_duplication(graph, arch, mode=args.solver)
        graph = apply_duplication(graph, d)
    plan = build_mapping(graph, arch, pe_min=pe_min)
    _emit(json.dumps(plan.to_json_obj(), indent=1) + "\n", args.out)
    return 0


def _cmd_schedule(args) -> int:
    graph, _, _ = _pipeline(args)
    result = run_config(
        graph, args.model, args.extra_pes, args.mode,
        pe_rows=args.pe_rows, pe_cols=args.pe_cols, t_mvm_ns=args.t_mvm_ns,
        sets_per_layer=args.sets_per_layer, solver=args.solver,
    )
    _emit(json.dumps(result.schedule.to_json_obj(), indent=1) + "\n", args.out)
    if args.dot:
        if result.deps is None:
            print("note: --dot needs a cross-layer mode; no dependency graph "
                  "was built", file=sys.stderr)
        else:
            with open(args.dot, "w", encoding="utf-8") as fh:
                fh.write(result.deps.to_dot())
    return 0


def _cmd_simulate(args) -> int:
    graph, _, _ = _pipeline(args)
    result = run_config(
        graph, args.model, args.extra_pes, args.mode,
        pe_rows=args.pe_rows, pe_cols=args.pe_cols, t_mvm_ns=args.t_mvm_ns,
        sets_per_layer=args.sets_per_layer, solver=args.solver,
    )
    report = result.report
    print(f"{args.model} {report.config_label}: {report.total_cycles} cycles "
          f"({report.total_latency_ns:.0f} ns), utilization {report.utilization:.3f}, "
          f"speedup {report.speedup:.1f}x")
    if args.out:
        _emit(json.dumps(report.to_json_obj(), indent=1) + "\n", args.out)
    return 0


def _cmd_gantt(args) -> int:
    graph, _, _ = _pipeline(args)
    result = run_config(
        graph, args.model, args.extra_pes, args.mode,
        pe_rows=args.pe_rows, pe_cols=args.pe_cols, t_mvm_ns=args.t_mvm_ns,
        sets_per_layer=args.sets_per_layer, solver=args.solver,
    )
    svg = emit_gantt(result.schedule, result.plan,
                     title=f"{args.model} {result.report.config_label}")
    _emit(svg, args.out)
    return 0


def _cmd_sweep(args) -> int:
    config = SweepConfig(
        benchmarks=tuple(args.bench or BENCHMARKS),
        extra_pes=tuple(args.extra_pes),
        modes=tuple(args.modes),
        pe_rows=args.pe_rows,
        pe_cols=args.pe_cols,
        t_mvm_ns=args.t_mvm_ns,
        sets_per_layer=args.sets_per_layer,
        solver=args.solver,
        out_dir=args.out,
        emit_artifacts=not args.no_artifacts,
    )
    rows = run_sweep(config)
    print(format_table(rows))
    if args.out:
        print(f"results written to {args.out}/results.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cimsched",
        description="Map, schedule, and simulate NN inference on a tiled "
                    "compute-in-memory architecture.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check shipped models against golden tables")
    p.add_argument("--pe-rows", type=int, default=256)
    p.add_argument("--pe-cols", type=int, default=256)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("map", help="compute the PE mapping plan")
    _common_flags(p)
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("schedule", help="compute a schedule as JSON")
    _common_flags(p)
    p.add_argument("--dot", help="also write the set dependency graph as DOT")
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("simulate", help="run one configuration and report metrics")
    _common_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gantt", help="render a schedule as an SVG Gantt chart")
    _common_flags(p)
    p.set_defaults(func=_cmd_gantt)

    p = sub.add_parser("sweep", help="run the benchmark/mode/PE sweep")
    p.add_argument("--bench", nargs="*", choices=BENCHMARKS,
                   help="benchmarks (default: all)")
    p.add_argument("--extra-pes", type=int, nargs="*", default=[4, 8, 16, 32])
    p.add_argument("--modes", nargs="*", choices=MODES, default=list(MODES))
    p.add_argument("--pe-rows", type=int, default=256)
    p.add_argument("--pe-cols", type=int, default=256)
    p.add_argument("--t-mvm-ns", type=float, default=1400.0)
    p.add_argument("--sets-per-layer", type=int, default=DEFAULT_SETS_PER_LAYER)
    p.add_argument("--solver", choices=("greedy", "exact"), default="greedy")
    p.add_argument("--out", help="output directory for results and artifacts")
    p.add_argument("--no-artifacts", action="store_true",
                   help="skip per-configuration schedule/gantt files")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
