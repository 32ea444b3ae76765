"""PE resource mapping and weight duplication.

Every base layer is lowered to a GEMM whose kernel matrix is tiled into
M x N crossbar processing elements. One output vector is produced per MVM
cycle, so a layer's initial latency is O_H * O_W cycles. Spare PEs can hold
duplicate copies of a layer's weights; the input is then split spatially
among the duplicates, dividing the layer latency.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .ir import KernelSpec, LayerNode, NNGraph, TensorShape, kernel_spec
from .regions import Region, region_backward

DEFAULT_PE_ROWS = 256
DEFAULT_PE_COLS = 256
DEFAULT_T_MVM_NS = 1400.0


class MappingError(Exception):
    pass


@dataclass(frozen=True)
class ArchConfig:
    """Abstract tiled architecture: PE count, PE dimensions, MVM latency.

    ``num_pe`` may be left at 0 while probing a graph's requirements; it is
    validated against the mapped total when a plan is built.
    """

    num_pe: int = 0
    pe_rows: int = DEFAULT_PE_ROWS
    pe_cols: int = DEFAULT_PE_COLS
    t_mvm_ns: float = DEFAULT_T_MVM_NS

    def __post_init__(self):
        if self.pe_rows < 1 or self.pe_cols < 1:
            raise MappingError("PE dimensions must be positive")
        if self.t_mvm_ns <= 0:
            raise MappingError("MVM latency must be positive")


@dataclass
class LayerMapping:
    layer: str
    pe_count: int
    tiles_v: int
    tiles_h: int
    duplicates: int
    t_init_cycles: int
    pe_start: int
    pe_end: int
    origin: str
    dup_index: int = 0

    @property
    def pe_range(self) -> tuple[int, int]:
        return (self.pe_start, self.pe_end)


@dataclass
class MappingPlan:
    """Per-base-layer PE allocation with disjoint contiguous PE id ranges."""

    layers: dict[str, LayerMapping]
    c_num: int
    total_pe_used: int
    num_pe: int
    pe_min: int

    def to_json_obj(self) -> dict:
        return {
            "layers": [
                {
                    "name": lm.layer,
                    "pe_count": lm.pe_count,
                    "tiles_v": lm.tiles_v,
                    "tiles_h": lm.tiles_h,
                    "duplicates": lm.duplicates,
                    "t_init_cycles": lm.t_init_cycles,
                    "pe_range": [lm.pe_start, lm.pe_end],
                }
                for lm in self.layers.values()
            ],
            "totals": {
                "pe_min": self.pe_min,
                "total_pe_used": self.total_pe_used,
                "F": self.num_pe,
            },
        }


def pe_count(kernel: KernelSpec, arch: ArchConfig) -> tuple[int, int, int]:
    """Tile grid and PE count for one kernel matrix.

    The unrolled kernel column (length k_w * k_h * k_in) is split over the
    PE column dimension, the output channels over the PE row dimension:
    count = ceil(k_w*k_h*k_in / N) * ceil(k_out / M).
    """
    tiles_v = -(-kernel.unrolled_len // arch.pe_cols)
    tiles_h = -(-kernel.k_out // arch.pe_rows)
    return tiles_v, tiles_h, tiles_v * tiles_h


def intra_layer_latency(ofm: TensorShape) -> int:
    """Cycles to compute a full OFM with intra-layer scheduling: one output
    vector (1 x 1 x O_C) per cycle, all tiles of the layer in parallel."""
    return ofm.h * ofm.w


def min_pe_requirement(graph: NNGraph, arch: ArchConfig) -> int:
    """Minimum PEs to store every base layer's weights exactly once."""
    return sum(
        pe_count(kernel_spec(graph, name), arch)[2] for name in graph.base_layers()
    )


def build_mapping(graph: NNGraph, arch: ArchConfig, pe_min: int | None = None) -> MappingPlan:
    """Assign each base layer (or duplicate) its PE tile grid and id range.

    PE ids are abstract; layers receive contiguous disjoint ranges in
    topological order. ``pe_min`` records the pre-duplication requirement
    when mapping a rewritten graph.
    """
    layers: dict[str, LayerMapping] = {}
    dup_totals: dict[str, int] = {}
    for name in graph.base_layers():
        origin = graph.nodes[name].attrs.get("origin", name)
        dup_totals[origin] = dup_totals.get(origin, 0) + 1
    cursor = 0
    c_num = 0
    for name in graph.base_layers():
        node = graph.nodes[name]
        tiles_v, tiles_h, count = pe_count(kernel_spec(graph, name), arch)
        origin = node.attrs.get("origin", name)
        layers[name] = LayerMapping(
            layer=name,
            pe_count=count,
            tiles_v=tiles_v,
            tiles_h=tiles_h,
            duplicates=dup_totals[origin],
            t_init_cycles=intra_layer_latency(graph.shape(name)),
            pe_start=cursor,
            pe_end=cursor + count,
            origin=origin,
            dup_index=node.attrs.get("dup_index", 0),
        )
        cursor += count
        if node.attrs.get("origin") is None or node.attrs.get("dup_index", 0) == 0:
            c_num += count
    if arch.num_pe < 1:
        raise MappingError("architecture PE count is not configured")
    if cursor > arch.num_pe:
        raise MappingError(
            f"graph '{graph.name}' needs {cursor} PEs but the architecture has "
            f"{arch.num_pe}"
        )
    return MappingPlan(
        layers=layers,
        c_num=c_num,
        total_pe_used=cursor,
        num_pe=arch.num_pe,
        pe_min=pe_min if pe_min is not None else c_num,
    )


# ---------------------------------------------------------------------------
# Weight duplication solver
# ---------------------------------------------------------------------------

def duplication_objective(t: list[int], d: list[int]) -> Fraction:
    """Sum of per-layer duplicated latencies t_i / d_i (exact rational)."""
    return sum((Fraction(ti, di) for ti, di in zip(t, d)), Fraction(0))


def _validate_instance(t, c, budget):
    if len(t) != len(c) or not t:
        raise MappingError("latency and cost vectors must be non-empty and equal length")
    if any(ti < 1 for ti in t) or any(ci < 1 for ci in c):
        raise MappingError("latencies and PE costs must be positive")
    if sum(c) > budget:
        raise MappingError(
            f"infeasible duplication instance: storing all weights once needs "
            f"{sum(c)} PEs, budget is {budget}"
        )


def solve_duplication(
    t: list[int], c: list[int], budget: int, mode: str = "greedy"
) -> list[int]:
    """Choose integer duplicate counts d >= 1 with c . d <= budget.

    Minimizes the summed duplicated latencies t_i / d_i. ``greedy`` buys
    increments by marginal latency gain (per-PE and raw variants, ties to
    the lowest layer index), then repairs budget fragmentation with
    improving single-swap moves, keeping the better result; ``exact`` finds
    the optimum by dynamic programming over the slack budget. A layer is
    never split into more duplicates than it has output vectors (d_i <= t_i).
    """
    _validate_instance(t, c, budget)
    caps = [max(ti, 1) for ti in t]
    if mode == "greedy":
        candidates = []
        for per_pe in (True, False):
            d, slack = _marginal_loop(t, c, budget, caps, per_pe)
            candidates.append(list(d))
            candidates.append(_swap_repair(t, c, caps, d, slack))
        return min(candidates, key=lambda d: (duplication_objective(t, d), d))
    if mode == "exact":
        return _solve_exact(t, c, budget, caps)
    raise MappingError(f"unknown solver mode '{mode}'")


def _marginal_loop(t, c, budget, caps, per_pe):
    n = len(t)
    d = [1] * n
    slack = budget - sum(c)
    while True:
        best_gain = 0.0
        best_i = -1
        for i in range(n):
            if c[i] > slack or d[i] >= caps[i]:
                continue
            gain = t[i] / (d[i] * (d[i] + 1))
            if per_pe:
                gain /= c[i]
            if gain > best_gain:
                best_gain = gain
                best_i = i
        if best_i < 0:
            return d, slack
        d[best_i] += 1
        slack -= c[best_i]


def _swap_repair(t, c, caps, d, slack):
    # give back duplicates of one layer to afford a better buy elsewhere
    n = len(t)
    while True:
        base = duplication_objective(t, d)
        best = None
        for i in range(n):
            for m in range(1, d[i]):
                freed = slack + m * c[i]
                for j in range(n):
                    if j == i:
                        continue
                    k = min(freed // c[j], caps[j] - d[j])
                    if k < 1:
                        continue
                    trial = list(d)
                    trial[i] -= m
                    trial[j] += k
                    val = duplication_objective(t, trial)
                    if val < base and (best is None or val < best[0]):
                        best = (val, trial, freed - k * c[j])
        if best is None:
            return d
        _, d, slack = best


def _solve_exact(t, c, budget, caps):
    # DP over remaining slack; g[i][s] = best objective for layers i.. with
    # slack s. Reconstruction prefers the fewest extra duplicates per layer,
    # scanning layers in order, which makes ties deterministic.
    n = len(t)
    slack = budget - sum(c)
    zero = Fraction(0)
    g = [[zero] * (slack + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for s in range(slack + 1):
            best = None
            max_extra = min(s // c[i], caps[i] - 1)
            for e in range(max_extra + 1):
                val = Fraction(t[i], 1 + e) + g[i + 1][s - e * c[i]]
                if best is None or val < best:
                    best = val
            g[i][s] = best
    d = []
    s = slack
    for i in range(n):
        max_extra = min(s // c[i], caps[i] - 1)
        for e in range(max_extra + 1):
            if Fraction(t[i], 1 + e) + g[i + 1][s - e * c[i]] == g[i][s]:
                d.append(1 + e)
                s -= e * c[i]
                break
    return d


def solve_graph_duplication(
    graph: NNGraph, arch: ArchConfig, mode: str = "greedy"
) -> dict[str, int]:
    """Solve duplication for a canonical graph; returns name -> d_i."""
    names = graph.base_layers()
    t = [intra_layer_latency(graph.shape(n)) for n in names]
    c = [pe_count(kernel_spec(graph, n), arch)[2] for n in names]
    d = solve_duplication(t, c, arch.num_pe, mode=mode)
    return dict(zip(names, d))


# ---------------------------------------------------------------------------
# Duplication graph rewrite
# ---------------------------------------------------------------------------

def split_parts(h: int, w: int, parts: int) -> list[list[Region]]:
    """Cut an h x w grid into ``parts`` near-equal rectangles.

    Cuts run along the width first: with column-only cuts every duplicate
    sweeps the same output rows in lockstep, so downstream layers see rows
    appear d times sooner. Rows are cut only when the map is too narrow,
    using as few row cuts as possible; surplus cells of an uneven grid are
    absorbed inside the rows. Returned row by row.
    """
    if parts > h * w:
        raise MappingError(f"cannot split a {h}x{w} grid into {parts} parts")
    g_h = next(g for g in range(1, min(parts, h) + 1) if -(-parts // g) <= w)
    base, extra = divmod(parts, g_h)
    cols_per_row = [base + 1 if r < extra else base for r in range(g_h)]

    def bounds(extent, pieces):
        size, rem = divmod(extent, pieces)
        edges = [0]
        for k in range(pieces):
            edges.append(edges[-1] + size + (1 if k < rem else 0))
        return edges

    row_edges = bounds(h, g_h)
    rows = []
    for r in range(g_h):
        col_edges = bounds(w, cols_per_row[r])
        rows.append(
            [
                Region(row_edges[r], row_edges[r + 1], col_edges[k], col_edges[k + 1])
                for k in range(cols_per_row[r])
            ]
        )
    return rows


def apply_duplication(graph: NNGraph, d: dict[str, int]) -> NNGraph:
    """Rewrite the graph so each base layer i runs as d_i parallel copies.

    Each duplicate convolves a slice of the shared input covering the
    receptive field of its OFM part (slices may overlap, depending on kernel
    and stride) and the parts are recombined by a concatenation tree whose
    depth equals the number of cut dimensions. The recombined OFM equals the
    original, so downstream nodes are untouched.
    """
    out = graph.clone()
    for name in graph.base_layers():
        count = d.get(name, 1)
        if count < 1:
            raise MappingError(f"duplicate count for '{name}' must be >= 1")
        if count == 1:
            continue
        node = out.nodes[name]
        if node.op != "conv2d":
            raise MappingError(f"layer '{name}' ({node.op}) cannot be duplicated")
        ofm = out.shape(name)
        ishape = out.shape(node.inputs[0])
        rows = split_parts(ofm.h, ofm.w, count)

        dup_index = 0
        row_results = []
        for row in rows:
            part_names = []
            for part in row:
                (need,) = region_backward(out, name, part)
                slice_name = _fresh(out, f"{name}.slice{dup_index}")
                out.nodes[slice_name] = LayerNode(
                    slice_name,
                    "slice",
                    (node.inputs[0],),
                    {
                        "begin": [need.r0, need.c0, 0],
                        "size": [need.r1 - need.r0, need.c1 - need.c0, ishape.c],
                    },
                )
                dup_name = _fresh(out, f"{name}.dup{dup_index}")
                attrs = dict(node.attrs)
                attrs["origin"] = node.attrs.get("origin", name)
                attrs["dup_index"] = dup_index
                out.nodes[dup_name] = LayerNode(dup_name, "conv2d", (slice_name,), attrs)
                if name in out.weights:
                    out.weights[dup_name] = out.weights[name]
                part_names.append(dup_name)
                dup_index += 1
            if len(part_names) > 1:
                cat = _fresh(out, f"{name}.cat_r{len(row_results)}")
                out.nodes[cat] = LayerNode(cat, "concat", tuple(part_names), {"axis": "w"})
                row_results.append(cat)
            else:
                row_results.append(part_names[0])
        if len(row_results) > 1:
            top = _fresh(out, f"{name}.cat")
            out.nodes[top] = LayerNode(top, "concat", tuple(row_results), {"axis": "h"})
        else:
            top = row_results[0]

        for other in out.nodes.values():
            if other.name != top and name in other.inputs:
                other.inputs = tuple(top if i == name else i for i in other.inputs)
        del out.nodes[name]
        out.weights.pop(name, None)
        out._topo = None

    from .ir import infer_shapes

    return infer_shapes(out)


def _fresh(graph: NNGraph, candidate: str) -> str:
    name = candidate
    while name in graph.nodes:
        name += "_"
    return name
