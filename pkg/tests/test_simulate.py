from fractions import Fraction

import pytest

from cimsched.ir import prepare
from cimsched.mapping import ArchConfig, build_mapping
from cimsched.scheduling import determine_dependencies, determine_sets, schedule_asap, \
    schedule_sequential
from cimsched.simulate import (
    SimulationError,
    check_speedup_relation,
    layer_by_layer_baseline,
    simulate,
)

from conftest import build_graph, conv_layer, layer


def _single_layer(num_pe):
    g = prepare(build_graph([
        layer("input", "input", shape=[5, 4, 3]),
        conv_layer("conv", "input", 1, 3, 8),
    ]))
    arch = ArchConfig(num_pe=num_pe)
    plan = build_mapping(g, arch)
    parts = determine_sets(g, plan, 1)
    sched = schedule_sequential(g, parts)
    return g, arch, plan, sched


def test_always_active_layer_has_full_utilization():
    _, arch, plan, sched = _single_layer(1)
    report = simulate(sched, plan, arch)
    assert report.utilization == 1.0
    assert report.total_cycles == 20
    assert report.total_latency_ns == 20 * 1400.0


def test_idle_surplus_pe_halves_utilization():
    _, arch, plan, sched = _single_layer(2)
    report = simulate(sched, plan, arch)
    assert report.utilization == 0.5
    assert report.per_pe_active_cycles == [20, 0]


def _two_layer_graph():
    # t = [10, 10], c = [1, 3] on a 32x32 PE architecture
    g = prepare(build_graph([
        layer("input", "input", shape=[5, 2, 3]),
        conv_layer("c1", "input", 1, 3, 8),
        layer("pad", "pad", ["c1"], pad=[1, 1, 1, 1]),
        conv_layer("c2", "pad", 3, 8, 8),
    ]))
    arch = ArchConfig(num_pe=4, pe_rows=32, pe_cols=32)
    plan = build_mapping(g, arch)
    return g, arch, plan


def test_layer_by_layer_baseline_formula():
    g, arch, plan = _two_layer_graph()
    assert plan.layers["c1"].pe_count == 1
    assert plan.layers["c2"].pe_count == 3
    cycles, ut = layer_by_layer_baseline(g, plan)
    assert cycles == 20
    assert ut == Fraction(1, 2)  # (10 + 30) / (4 * 20)


def test_simulator_agrees_with_schedule_makespan():
    g, arch, plan = _two_layer_graph()
    parts = determine_sets(g, plan, 16)
    sched = schedule_asap(determine_dependencies(g, parts), parts)
    report = simulate(sched, plan, arch, baseline_cycles=20)
    assert report.total_cycles == sched.makespan
    assert report.speedup == 20 / sched.makespan >= 1.0


def test_identity_relation_for_sequential_schedule():
    g, arch, plan = _two_layer_graph()
    baseline = layer_by_layer_baseline(g, plan)
    parts = determine_sets(g, plan, 1)
    sched = schedule_sequential(g, parts)
    report = simulate(sched, plan, arch, baseline_cycles=baseline[0])
    assert check_speedup_relation(report, baseline, plan.pe_min, 0) == 0.0


def test_identity_relation_for_cross_layer_schedule_with_surplus():
    g, _, _ = _two_layer_graph()
    pe_min = 4
    for x in (0, 5, 12):
        arch = ArchConfig(num_pe=pe_min + x, pe_rows=32, pe_cols=32)
        plan = build_mapping(g, arch)
        baseline = layer_by_layer_baseline(g, plan)
        parts = determine_sets(g, plan, 16)
        sched = schedule_asap(determine_dependencies(g, parts), parts)
        report = simulate(sched, plan, arch, baseline_cycles=baseline[0])
        # active PE-cycles are conserved, so the identity is exact
        assert check_speedup_relation(report, baseline, pe_min, x) == 0.0


def test_work_conservation_between_schedules():
    g, arch, plan = _two_layer_graph()
    seq = simulate(schedule_sequential(g, determine_sets(g, plan, 1)), plan, arch)
    parts = determine_sets(g, plan, 16)
    asap = simulate(schedule_asap(determine_dependencies(g, parts), parts), plan, arch)
    assert seq.total_active_pe_cycles == asap.total_active_pe_cycles


def test_simulate_rejects_unmapped_layer():
    g, arch, plan = _two_layer_graph()
    parts = determine_sets(g, plan, 1)
    sched = schedule_sequential(g, parts)
    del plan.layers["c2"]
    with pytest.raises(SimulationError, match="unmapped"):
        simulate(sched, plan, arch)


def test_simulate_rejects_pe_overflow():
    g, _, plan = _two_layer_graph()
    parts = determine_sets(g, plan, 1)
    sched = schedule_sequential(g, parts)
    with pytest.raises(SimulationError, match="outside"):
        simulate(sched, plan, ArchConfig(num_pe=2, pe_rows=32, pe_cols=32))


def test_baseline_rejects_duplicated_mapping():
    g, arch, plan = _two_layer_graph()
    plan.layers["c1"].origin = "other"
    with pytest.raises(SimulationError, match="non-duplicated"):
        layer_by_layer_baseline(g, plan)


def test_report_json_fields():
    _, arch, plan, sched = _single_layer(2)
    report = simulate(sched, plan, arch, baseline_cycles=40, label="base lbl")
    obj = report.to_json_obj()
    assert obj["config_label"] == "base lbl"
    assert obj["speedup"] == 2.0
    assert obj["total_active_pe_cycles"] == 20
    assert obj["per_pe_active_cycles"] == [20, 0]
    assert "per_pe_active_cycles" not in report.to_json_obj(include_per_pe=False)
