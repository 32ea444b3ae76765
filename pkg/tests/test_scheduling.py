import json
import random

import pytest

from cimsched.ir import infer_shapes, prepare
from cimsched.mapping import apply_duplication
from cimsched.regions import Region
from cimsched.scheduling import (
    SchedulingError,
    SetDependencyGraph,
    SetPartition,
    determine_dependencies,
    determine_sets,
    order_sets,
    pool_granularity,
    schedule_asap,
    schedule_sequential,
)

from conftest import (
    build_graph,
    conv_layer,
    influence_edges,
    layer,
    ones_weights,
    random_canonical_graph,
)


def _pool_pair_graph():
    """conv1 (4x4 OFM) -> 2x2/2x2 pool -> conv2 (2x2 OFM), both 1x1 convs."""
    return prepare(build_graph([
        layer("input", "input", shape=[4, 4, 8]),
        conv_layer("conv1", "input", 1, 8, 8),
        layer("pool", "maxpool2d", ["conv1"], size=[2, 2], stride=[2, 2]),
        conv_layer("conv2", "pool", 1, 8, 16),
        layer("out", "output", ["conv2"]),
    ]))


def _hand_partitions():
    """The partitions of the worked example: four 2x2 sets feeding pooling,
    four single-element consumer sets."""
    return {
        "conv1": SetPartition("conv1", "conv1", 0, (2, 2), [
            Region(0, 2, 0, 2), Region(0, 2, 2, 4),
            Region(2, 4, 0, 2), Region(2, 4, 2, 4)]),
        "conv2": SetPartition("conv2", "conv2", 0, (2, 2), [
            Region(0, 1, 0, 1), Region(0, 1, 1, 2),
            Region(1, 2, 0, 1), Region(1, 2, 1, 2)]),
    }


def test_determine_sets_respects_pooling_granularity():
    g = _pool_pair_graph()
    parts = determine_sets(g, None, 4)
    assert parts["conv1"].grid == (2, 2)
    assert parts["conv1"].sets == _hand_partitions()["conv1"].sets
    assert all(r.area == 4 for r in parts["conv1"].sets)


def test_determine_sets_single_set_target():
    g = _pool_pair_graph()
    parts = determine_sets(g, None, 1)
    assert parts["conv1"].grid == (1, 1)
    assert parts["conv1"].sets == [Region(0, 4, 0, 4)]


def test_determine_sets_row_granular_split():
    # without downstream pooling the split maximizes set rows; on 13 rows the
    # finest balanced banding is three bands (a 4-band split would leave a
    # single-row remainder, 4x imbalance)
    g = prepare(build_graph([
        layer("input", "input", shape=[13, 13, 8]),
        conv_layer("conv", "input", 1, 8, 8),
    ]))
    parts = determine_sets(g, None, 4)
    assert parts["conv"].grid == (3, 1)
    rows = [r.r1 - r.r0 for r in parts["conv"].sets]
    assert sorted(rows) == [3, 4, 6]
    areas = [r.area for r in parts["conv"].sets]
    assert max(areas) <= 2 * min(areas)


def test_determine_sets_coverage_disjoint_balance():
    rng = random.Random(3)
    for _ in range(25):
        g = random_canonical_graph(rng)
        for part in determine_sets(g, None, 16).values():
            ofm = g.shape(part.layer)
            assert sum(r.area for r in part.sets) == ofm.h * ofm.w
            for i, a in enumerate(part.sets):
                for b in part.sets[i + 1:]:
                    assert not a.intersects(b)
            areas = [r.area for r in part.sets]
            assert max(areas) <= 2 * min(areas)


def test_pool_granularity_composes_scales():
    g = infer_shapes(build_graph([
        layer("input", "input", shape=[16, 16, 4]),
        conv_layer("c1", "input", 1, 4, 4),
        layer("p1", "maxpool2d", ["c1"], size=[2, 2], stride=[2, 2]),
        layer("p2", "maxpool2d", ["p1"], size=[2, 2], stride=[2, 2]),
        conv_layer("c2", "p2", 1, 4, 4),
    ]))
    assert pool_granularity(g, "c1") == (4, 4)  # stacked 2x2 pools
    assert pool_granularity(g, "c2") == (1, 1)


def test_order_sets_row_major():
    part = _hand_partitions()["conv1"]
    assert order_sets(part) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    single = SetPartition("l", "l", 0, (1, 1), [Region(0, 4, 0, 4)])
    assert order_sets(single) == [(0, 0)]
    tall = SetPartition("l", "l", 0, (3, 1),
                        [Region(0, 2, 0, 4), Region(2, 4, 0, 4), Region(4, 6, 0, 4)])
    assert order_sets(tall) == [(0, 0), (1, 0), (2, 0)]


def test_dependencies_aligned_one_to_one():
    g = prepare(build_graph([
        layer("input", "input", shape=[6, 6, 4]),
        conv_layer("c1", "input", 1, 4, 4),
        conv_layer("c2", "c1", 1, 4, 4),
    ]))
    parts = determine_sets(g, None, 1)
    deps = determine_dependencies(g, parts)
    assert deps.data_edges == {("c2", 0): [("c1", 0)]}
    assert deps.in_multiplicity(("c2", 0)) == 1
    assert deps.out_multiplicity(("c1", 0)) == 1


def test_dependencies_pool_pair_diagonal():
    g = _pool_pair_graph()
    deps = determine_dependencies(g, _hand_partitions())
    for idx in range(4):
        assert deps.data_edges[("conv2", idx)] == [("conv1", idx)]


def test_dependencies_multiplicity_over_pooled_boundary():
    # a 3x3 conv after pooling reaches across pooled-set boundaries: its
    # interior sets need several producer sets (P > 1)
    g = prepare(build_graph([
        layer("input", "input", shape=[8, 8, 4]),
        conv_layer("c1", "input", 1, 4, 8),
        layer("bias", "bias_add", ["c1"]),
        layer("act", "activation", ["bias"], kind="relu"),
        layer("pool", "maxpool2d", ["act"], size=[2, 2], stride=[2, 2]),
        layer("pad", "pad", ["pool"], pad=[1, 1, 1, 1]),
        conv_layer("c2", "pad", 3, 8, 8),
        layer("out", "output", ["c2"]),
    ]))
    parts = determine_sets(g, None, 4)
    deps = determine_dependencies(g, parts)
    assert parts["c1"].grid == (4, 1) and parts["c2"].grid == (2, 2)
    p_values = [deps.in_multiplicity(("c2", i)) for i in range(4)]
    assert all(p > 1 for p in p_values)  # receptive fields span band bounds
    assert deps.out_multiplicity(("c1", 0)) > 1


def test_dependencies_residual_add_joins_both_producers():
    g = prepare(build_graph([
        layer("input", "input", shape=[6, 6, 4]),
        conv_layer("c1", "input", 1, 4, 8),
        conv_layer("c2", "c1", 1, 8, 8),
        layer("add", "add", ["c1", "c2"]),
        conv_layer("c3", "add", 1, 8, 8),
    ]))
    parts = determine_sets(g, None, 1)
    deps = determine_dependencies(g, parts)
    assert deps.data_edges[("c3", 0)] == [("c1", 0), ("c2", 0)]


def test_dependencies_match_influence_oracle_fixed_graphs():
    g = _pool_pair_graph()
    ones_weights(g)
    parts = _hand_partitions()
    deps = determine_dependencies(g, parts)
    mine = {(p, c) for c, ps in deps.data_edges.items() for p in ps}
    assert mine == influence_edges(g, parts)


def test_resource_edges_chain_per_layer():
    g = _pool_pair_graph()
    deps = determine_dependencies(g, _hand_partitions())
    chains = list(deps.resource_edges())
    assert (("conv1", 0), ("conv1", 1)) in chains
    assert (("conv1", 2), ("conv1", 3)) in chains
    assert len(chains) == 6


def test_asap_hand_traced_schedule():
    # producer sets finish at 4, 8, 12, 16; each single-element consumer set
    # starts exactly when its pooled source set completes: makespan 17
    g = _pool_pair_graph()
    parts = _hand_partitions()
    deps = determine_dependencies(g, parts)
    sched = schedule_asap(deps, parts)
    conv1 = [e for e in sched.entries if e.node == "conv1"]
    conv2 = [e for e in sched.entries if e.node == "conv2"]
    assert [e.end for e in conv1] == [4, 8, 12, 16]
    assert [e.start for e in conv2] == [4, 8, 12, 16]
    assert [e.end for e in conv2] == [5, 9, 13, 17]
    assert sched.makespan == 17
    assert schedule_sequential(g, parts).makespan == 20


def test_asap_single_layer_equals_baseline():
    g = prepare(build_graph([
        layer("input", "input", shape=[5, 7, 3]),
        conv_layer("conv", "input", 1, 3, 8),
    ]))
    parts = determine_sets(g, None, 16)
    sched = schedule_asap(determine_dependencies(g, parts), parts)
    assert sched.makespan == 35


def test_asap_duplicated_halves_run_concurrently():
    g = ones_weights(infer_shapes(build_graph([
        layer("input", "input", shape=[8, 8, 2]),
        conv_layer("conv", "input", 1, 2, 4),
        layer("out", "output", ["conv"]),
    ])))
    dup = apply_duplication(g, {"conv": 2})
    parts = determine_sets(dup, None, 4)
    deps = determine_dependencies(dup, parts)
    sched = schedule_asap(deps, parts)
    starts = {e.node: e.start for e in sched.entries if e.set_index == 0}
    assert all(s == 0 for s in starts.values())
    assert sched.makespan == 32  # half of 64, exact for an even split


def test_asap_detects_unsorted_cycle():
    parts = {
        "a": SetPartition("a", "a", 0, (1, 1), [Region(0, 2, 0, 2)]),
        "b": SetPartition("b", "b", 0, (1, 1), [Region(0, 2, 0, 2)]),
    }
    deps = SetDependencyGraph(
        base_order=["a", "b"], num_sets={"a": 1, "b": 1},
        data_edges={("a", 0): [("b", 0)], ("b", 0): [("a", 0)]},
        out_edges={},
    )
    with pytest.raises(SchedulingError, match="cycle"):
        schedule_asap(deps, parts)


def test_sequential_groups_duplicates_in_parallel():
    g = ones_weights(infer_shapes(build_graph([
        layer("input", "input", shape=[8, 8, 2]),
        conv_layer("c1", "input", 1, 2, 4),
        layer("act", "activation", ["c1"]),
        conv_layer("c2", "act", 1, 4, 4),
        layer("out", "output", ["c2"]),
    ])))
    dup = apply_duplication(g, {"c1": 2, "c2": 1})
    parts = determine_sets(dup, None, 1)
    sched = schedule_sequential(dup, parts)
    assert sched.makespan == 32 + 64  # duplicated layer halves, then c2
    c1_starts = {e.start for e in sched.entries if e.origin == "c1"}
    assert c1_starts == {0}


def test_asap_starts_are_locally_optimal():
    rng = random.Random(11)
    for _ in range(15):
        g = random_canonical_graph(rng)
        parts = determine_sets(g, None, rng.choice((4, 9, 16)))
        deps = determine_dependencies(g, parts)
        sched = schedule_asap(deps, parts)
        end = {(e.node, e.set_index): e.end for e in sched.entries}
        prev = {}
        for e in sched.entries:
            bound = prev.get(e.node, 0)
            for ref in deps.data_edges.get((e.node, e.set_index), ()):
                bound = max(bound, end[ref])
            assert e.start == bound  # any earlier start violates an edge
            prev[e.node] = e.end


def test_schedule_json_shape():
    g = _pool_pair_graph()
    parts = _hand_partitions()
    sched = schedule_asap(determine_dependencies(g, parts), parts)
    obj = sched.to_json_obj()
    assert obj[0] == {"layer": "conv1", "duplicate": 0, "set_index": 0,
                      "region": [0, 2, 0, 2], "start_cycle": 0, "end_cycle": 4}
    json.dumps(obj)


def test_dependency_dot_export():
    g = _pool_pair_graph()
    deps = determine_dependencies(g, _hand_partitions())
    dot = deps.to_dot()
    assert dot.startswith("digraph")
    assert '"conv1/0" -> "conv2/0"' in dot
    assert "dashed" in dot
