"""Benchmark harness: model loading, golden validation, configuration sweeps.

A sweep cell is (benchmark, x, mode) where the architecture has PE_min + x
processing elements and mode picks the mapping (with or without weight
duplication) and the scheduling (layer-by-layer or cross-layer).
"""
from __future__ import annotations

import csv
import io
import json
import os
import re
from dataclasses import dataclass
from importlib import resources

from .ir import NNGraph, load_model, parse_model, prepare
from .mapping import (
    ArchConfig,
    MappingPlan,
    apply_duplication,
    build_mapping,
    min_pe_requirement,
    solve_graph_duplication,
)
from .scheduling import (
    DEFAULT_SETS_PER_LAYER,
    Schedule,
    determine_dependencies,
    determine_sets,
    schedule_asap,
    schedule_sequential,
)
from .simulate import SimReport, check_speedup_relation, layer_by_layer_baseline, simulate

BENCHMARKS = (
    "tiny_yolo_v4",
    "tiny_yolo_v3",
    "vgg16",
    "vgg19",
    "resnet50",
    "resnet101",
    "resnet152",
)

# (base layer count, minimum 256x256 PEs, input shape)
EXPECTED = {
    "tiny_yolo_v4": (21, 117, (416, 416, 3)),
    "tiny_yolo_v3": (13, 142, (416, 416, 3)),
    "vgg16": (13, 233, (224, 224, 3)),
    "vgg19": (16, 314, (224, 224, 3)),
    "resnet50": (53, 390, (224, 224, 3)),
    "resnet101": (104, 679, (224, 224, 3)),
    "resnet152": (155, 936, (224, 224, 3)),
}

# golden per-layer data for tiny_yolo_v4: IFM shape, OFM shape, PEs, cycles
GOLDEN_TINY_YOLO_V4 = {
    "conv2d":    ((417, 417, 3), (208, 208, 32), 1, 43264),
    "conv2d_1":  ((209, 209, 32), (104, 104, 64), 2, 10816),
    "conv2d_2":  ((106, 106, 64), (104, 104, 64), 3, 10816),
    "conv2d_16": ((15, 15, 256), (13, 13, 512), 18, 169),
    "conv2d_17": ((13, 13, 512), (13, 13, 255), 2, 169),
    "conv2d_20": ((26, 26, 256), (26, 26, 255), 1, 676),
}

MODES = ("lbl", "wdup", "xinf", "wdup+xinf")
_MODE_SPLIT = {
    "lbl": ("base", "lbl"),
    "wdup": ("wdup", "lbl"),
    "xinf": ("base", "xinf"),
    "wdup+xinf": ("wdup", "xinf"),
}


def load_benchmark(name_or_path: str) -> NNGraph:
    """Load a model by shipped benchmark name or by file path."""
    if os.path.exists(name_or_path):
        return load_model(name_or_path)
    if name_or_path in BENCHMARKS:
        text = (
            resources.files("cimsched").joinpath("models", f"{name_or_path}.json")
            .read_text(encoding="utf-8")
        )
        return parse_model(text)
    raise FileNotFoundError(f"no such model file or benchmark: '{name_or_path}'")


# ---------------------------------------------------------------------------
# Golden validation
# ---------------------------------------------------------------------------

@dataclass
class CheckRow:
    benchmark: str
    check: str
    expected: object
    actual: object

    @property
    def passed(self) -> bool:
        return self.expected == self.actual


def validate_models(pe_rows: int = 256, pe_cols: int = 256) -> list[CheckRow]:
    """Check every shipped model against the expected layer counts, PE
    requirements, and the tiny_yolo_v4 per-layer golden table."""
    arch = ArchConfig(pe_rows=pe_rows, pe_cols=pe_cols)
    rows: list[CheckRow] = []
    for name in BENCHMARKS:
        expected_layers, expected_pe, _ = EXPECTED[name]
        graph = prepare(load_benchmark(name))
        base = graph.base_layers()
        rows.append(CheckRow(name, "base_layers", expected_layers, len(base)))
        rows.append(CheckRow(name, "pe_min", expected_pe, min_pe_requirement(graph, arch)))
        if name == "tiny_yolo_v4":
            plan = build_mapping(graph, ArchConfig(num_pe=10**6, pe_rows=pe_rows,
                                                   pe_cols=pe_cols))
            for layer, (ifm, ofm, pes, cycles) in GOLDEN_TINY_YOLO_V4.items():
                src = graph.nodes[layer].inputs[0]
                rows.append(CheckRow(name, f"{layer}/ifm", ifm, graph.shape(src).astuple()))
                rows.append(CheckRow(name, f"{layer}/ofm", ofm, graph.shape(layer).astuple()))
                rows.append(CheckRow(name, f"{layer}/pe", pes, plan.layers[layer].pe_count))
                rows.append(
                    CheckRow(name, f"{layer}/cycles", cycles, plan.layers[layer].t_init_cycles)
                )
    return rows


# ---------------------------------------------------------------------------
# Single-configuration pipeline
# ---------------------------------------------------------------------------

@dataclass
class ConfigResult:
    benchmark: str
    x: int
    mapping_mode: str
    scheduling_mode: str
    report: SimReport
    schedule: Schedule
    plan: MappingPlan
    eq_deviation: float
    deps: object = None  # SetDependencyGraph for cross-layer runs


def run_config(
    graph: NNGraph,
    benchmark: str,
    x: int,
    mode: str,
    *,
    pe_rows: int = 256,
    pe_cols: int = 256,
    t_mvm_ns: float = 1400.0,
    sets_per_layer: int = DEFAULT_SETS_PER_LAYER,
    solver: str = "greedy",
) -> ConfigResult:
    """Run one (x, mode) cell on an already-canonical graph."""
    mapping_mode, sched_mode = _MODE_SPLIT[mode]
    probe = ArchConfig(pe_rows=pe_rows, pe_cols=pe_cols, t_mvm_ns=t_mvm_ns)
    pe_min = min_pe_requirement(graph, probe)
    arch = ArchConfig(num_pe=pe_min + x, pe_rows=pe_rows, pe_cols=pe_cols,
                      t_mvm_ns=t_mvm_ns)
    base_plan = build_mapping(graph, arch)
    baseline = layer_by_layer_baseline(graph, base_plan)

    if mapping_mode == "wdup":
        d = solve_graph_duplication(graph, arch, mode=solver)
        run_graph = apply_duplication(graph, d)
        plan = build_mapping(run_graph, arch, pe_min=pe_min)
        label = f"wdup+{x} {sched_mode}"
    else:
        run_graph, plan = graph, base_plan
        label = f"base {sched_mode}"

    deps = None
    if sched_mode == "xinf":
        partitions = determine_sets(run_graph, plan, sets_per_layer)
        deps = determine_dependencies(run_graph, partitions)
        schedule = schedule_asap(deps, partitions, plan)
    else:
        partitions = determine_sets(run_graph, plan, 1)
        schedule = schedule_sequential(run_graph, partitions)

    report = simulate(schedule, plan, arch, baseline_cycles=baseline[0], label=label)
    deviation = check_speedup_relation(report, baseline, pe_min, x)
    return ConfigResult(benchmark, x, mapping_mode, sched_mode, report, schedule,
                        plan, deviation, deps)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepConfig:
    benchmarks: tuple[str, ...] = BENCHMARKS
    extra_pes: tuple[int, ...] = (4, 8, 16, 32)
    modes: tuple[str, ...] = MODES
    pe_rows: int = 256
    pe_cols: int = 256
    t_mvm_ns: float = 1400.0
    sets_per_layer: int = DEFAULT_SETS_PER_LAYER
    solver: str = "greedy"
    out_dir: str | None = None
    emit_artifacts: bool = True

    def __post_init__(self):
        if not self.modes:
            raise ValueError("sweep needs at least one mode")
        if any(x < 0 for x in self.extra_pes):
            raise ValueError("extra PE counts must be non-negative")


def run_sweep(config: SweepConfig) -> list[dict]:
    """Run the full configuration grid; returns one row dict per cell.

    Rows are sorted by (benchmark, x, mode). Cells whose result does not
    depend on x (no duplication) are computed once and re-simulated per x.
    """
    from .gantt import emit_gantt

    rows = []
    for benchmark in sorted(config.benchmarks):
        graph = prepare(load_benchmark(benchmark))
        cache: dict[tuple, ConfigResult] = {}
        for x in sorted(config.extra_pes):
            for mode in sorted(config.modes):
                mapping_mode, _ = _MODE_SPLIT[mode]
                key = (mode,) if mapping_mode == "base" else (mode, x)
                if key in cache and mapping_mode == "base":
                    cached = cache[key]
                    result = _resimulate(graph, cached, benchmark, x, mode, config)
                else:
                    result = run_config(
                        graph, benchmark, x, mode,
                        pe_rows=config.pe_rows, pe_cols=config.pe_cols,
                        t_mvm_ns=config.t_mvm_ns,
                        sets_per_layer=config.sets_per_layer, solver=config.solver,
                    )
                    cache[key] = result
                rows.append(_result_row(result))
                if config.out_dir and config.emit_artifacts:
                    _write_artifacts(config.out_dir, result, emit_gantt)
    rows.sort(key=lambda r: (r["benchmark"], r["x"], r["mapping"], r["scheduling"]))
    if config.out_dir:
        _write_tables(config.out_dir, rows)
    return rows


def _resimulate(graph, cached: ConfigResult, benchmark, x, mode, config) -> ConfigResult:
    # same schedule, different architecture size: only utilization changes
    mapping_mode, sched_mode = _MODE_SPLIT[mode]
    pe_min = cached.plan.pe_min
    arch = ArchConfig(num_pe=pe_min + x, pe_rows=config.pe_rows,
                      pe_cols=config.pe_cols, t_mvm_ns=config.t_mvm_ns)
    baseline = layer_by_layer_baseline(graph, cached.plan)
    label = f"base {sched_mode}"
    report = simulate(cached.schedule, cached.plan, arch,
                      baseline_cycles=cached.report.baseline_cycles, label=label)
    deviation = check_speedup_relation(report, baseline, pe_min, x)
    return ConfigResult(benchmark, x, mapping_mode, sched_mode, report,
                        cached.schedule, cached.plan, deviation)


def _result_row(result: ConfigResult) -> dict:
    report = result.report
    return {
        "benchmark": result.benchmark,
        "x": result.x,
        "mapping": result.mapping_mode,
        "scheduling": result.scheduling_mode,
        "cycles": report.total_cycles,
        "latency_ns": report.total_latency_ns,
        "utilization": report.utilization,
        "speedup": report.speedup,
        "num_pe": report.num_pe,
        "pe_min": result.plan.pe_min,
        "baseline_cycles": report.baseline_cycles,
        "active_pe_cycles": report.total_active_pe_cycles,
        "speedup_identity_deviation": result.eq_deviation,
        "label": report.config_label,
    }


CSV_COLUMNS = ("benchmark", "x", "mapping", "scheduling", "cycles", "latency_ns",
               "utilization", "speedup")


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                         for c in CSV_COLUMNS])
    return buf.getvalue()


def format_table(rows: list[dict]) -> str:
    """Human-readable summary: utilization to 3 decimals, speedup to 1."""
    header = f"{'benchmark':<14} {'x':>3} {'mode':<12} {'cycles':>10} {'util':>6} {'speedup':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        mode = r["mapping"] + ("+xinf" if r["scheduling"] == "xinf" else "")
        mode = {"base": "lbl", "base+xinf": "xinf", "wdup": "wdup",
                "wdup+xinf": "wdup+xinf"}[mode]
        lines.append(
            f"{r['benchmark']:<14} {r['x']:>3} {mode:<12} {r['cycles']:>10} "
            f"{r['utilization']:>6.3f} {r['speedup']:>7.1f}x"
        )
    return "\n".join(lines)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]+", "_", text)


def _write_artifacts(out_dir: str, result: ConfigResult, emit_gantt):
    mode = result.mapping_mode + "-" + result.scheduling_mode
    cell_dir = os.path.join(out_dir, result.benchmark, _slug(f"x{result.x}_{mode}"))
    os.makedirs(cell_dir, exist_ok=True)
    with open(os.path.join(cell_dir, "schedule.json"), "w", encoding="utf-8") as fh:
        json.dump(result.schedule.to_json_obj(), fh, indent=1)
        fh.write("\n")
    with open(os.path.join(cell_dir, "gantt.svg"), "w", encoding="utf-8") as fh:
        fh.write(emit_gantt(result.schedule, result.plan,
                            title=f"{result.benchmark} {result.report.config_label}"))
    with open(os.path.join(cell_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(result.report.to_json_obj(), fh, indent=1)
        fh.write("\n")


def _write_tables(out_dir: str, rows: list[dict]):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows))
    with open(os.path.join(out_dir, "results.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")
