"""Cycle-level performance metrics for a scheduled network.

A layer's whole PE group is active during every cycle one of its sets
executes; everything else idles. Utilization is the mean over all PEs of the
architecture (idle surplus PEs included) of active cycles over total
inference cycles. Speedup is measured against the strictly sequential
layer-by-layer schedule of the non-duplicated graph.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .ir import NNGraph
from .mapping import ArchConfig, MappingPlan
from .scheduling import Schedule


class SimulationError(Exception):
    pass


@dataclass
class SimReport:
    total_cycles: int
    total_latency_ns: float
    per_pe_active_cycles: list[int]
    utilization: float
    baseline_cycles: int
    speedup: float
    config_label: str
    num_pe: int

    @property
    def total_active_pe_cycles(self) -> int:
        return sum(self.per_pe_active_cycles)

    def to_json_obj(self, include_per_pe: bool = True) -> dict:
        obj = {
            "config_label": self.config_label,
            "num_pe": self.num_pe,
            "total_cycles": self.total_cycles,
            "total_latency_ns": self.total_latency_ns,
            "baseline_cycles": self.baseline_cycles,
            "speedup": self.speedup,
            "utilization": self.utilization,
            "total_active_pe_cycles": self.total_active_pe_cycles,
        }
        if include_per_pe:
            obj["per_pe_active_cycles"] = list(self.per_pe_active_cycles)
        return obj


def simulate(
    schedule: Schedule,
    mapping: MappingPlan,
    arch: ArchConfig,
    baseline_cycles: int | None = None,
    label: str = "",
) -> SimReport:
    """Convert a schedule into per-PE activity and summary metrics."""
    active = [0] * arch.num_pe
    for entry in schedule.entries:
        lm = mapping.layers.get(entry.node)
        if lm is None:
            raise SimulationError(f"schedule references unmapped layer '{entry.node}'")
        if lm.pe_end > arch.num_pe:
            raise SimulationError(
                f"layer '{entry.node}' uses PEs [{lm.pe_start}, {lm.pe_end}) outside "
                f"the architecture's {arch.num_pe}"
            )
        duration = entry.end - entry.start
        for p in range(lm.pe_start, lm.pe_end):
            active[p] += duration
    total = schedule.makespan
    if any(a > total for a in active):
        raise SimulationError("a PE is active for more cycles than the schedule spans")
    utilization = sum(active) / (arch.num_pe * total) if total else 0.0
    if baseline_cycles is None:
        baseline_cycles = total
    speedup = baseline_cycles / total if total else 1.0
    return SimReport(
        total_cycles=total,
        total_latency_ns=total * arch.t_mvm_ns,
        per_pe_active_cycles=active,
        utilization=utilization,
        baseline_cycles=baseline_cycles,
        speedup=speedup,
        config_label=label,
        num_pe=arch.num_pe,
    )


def layer_by_layer_baseline(
    graph: NNGraph, mapping: MappingPlan
) -> tuple[int, Fraction]:
    """Cycles and utilization of strictly sequential inference.

    Only one layer's PE group is active at any time, so the total is the sum
    of the per-layer latencies and the utilization is
    sum(c_i * t_i) / (PE_min * sum(t_i)). Requires the non-duplicated graph.
    """
    if any(lm.dup_index or lm.origin != lm.layer for lm in mapping.layers.values()):
        raise SimulationError("baseline is defined on the non-duplicated mapping")
    cycles = sum(lm.t_init_cycles for lm in mapping.layers.values())
    if cycles == 0:
        return 0, Fraction(0)
    active = sum(lm.pe_count * lm.t_init_cycles for lm in mapping.layers.values())
    return cycles, Fraction(active, mapping.c_num * cycles)


def check_speedup_relation(
    report: SimReport, baseline: tuple[int, Fraction | float], pe_min: int, x: int
) -> float:
    """Relative deviation from the utilization/speedup identity
    S = Ut * (PE_min + x) / (Ut_lbl * PE_min).

    Exactly zero whenever active PE-cycles are conserved between the two
    schedules; computed in rational arithmetic so the zero is literal.
    """
    _, ut_lbl = baseline
    if not isinstance(ut_lbl, Fraction):
        ut_lbl = Fraction(ut_lbl)
    speedup = Fraction(report.baseline_cycles, report.total_cycles)
    ut = Fraction(report.total_active_pe_cycles, report.num_pe * report.total_cycles)
    predicted = ut * (pe_min + x) / (ut_lbl * pe_min)
    return float(abs(speedup - predicted) / speedup)
