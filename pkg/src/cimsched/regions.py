"""Half-open spatial rectangles and backward region propagation.

A region identifies a hyperrectangular fragment of a feature map by two
coordinates. Backward propagation answers: which part of a node's input is
needed to produce a given part of its output? Regions are exact (minimal),
which the dependency builder relies on.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ir import BASE_OPS, POOL_OPS, GraphError, NNGraph, TensorShape, kernel_spec


@dataclass(frozen=True, order=True)
class Region:
    """Rows [r0, r1) x cols [c0, c1) of a feature map; never empty."""

    r0: int
    r1: int
    c0: int
    c1: int

    def __post_init__(self):
        if not (0 <= self.r0 < self.r1 and 0 <= self.c0 < self.c1):
            raise ValueError(f"degenerate region {(self.r0, self.r1, self.c0, self.c1)}")

    @property
    def area(self) -> int:
        return (self.r1 - self.r0) * (self.c1 - self.c0)

    def intersects(self, other: "Region") -> bool:
        return (
            self.r0 < other.r1
            and other.r0 < self.r1
            and self.c0 < other.c1
            and other.c0 < self.c1
        )

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.r0, self.r1, self.c0, self.c1)


def full_region(shape: TensorShape) -> Region:
    return Region(0, shape.h, 0, shape.w)


def _clip(r0, r1, c0, c1, h, w) -> Region | None:
    r0, r1 = max(r0, 0), min(r1, h)
    c0, c1 = max(c0, 0), min(c1, w)
    if r0 >= r1 or c0 >= c1:
        return None
    return Region(r0, r1, c0, c1)


def _window_backward(region: Region, k_h, k_w, s_h, s_w, ishape) -> Region | None:
    # union of the receptive fields of a sliding k x k window at stride s
    return _clip(
        region.r0 * s_h,
        (region.r1 - 1) * s_h + k_h,
        region.c0 * s_w,
        (region.c1 - 1) * s_w + k_w,
        ishape.h,
        ishape.w,
    )


def region_backward(graph: NNGraph, name: str, region: Region) -> list[Region | None]:
    """Minimal input region(s) needed to compute ``region`` of node ``name``.

    Returns one entry per node input, in input order; ``None`` marks an empty
    requirement (e.g. a pure-padding region), i.e. no dependency on that
    input.
    """
    node = graph.nodes[name]
    op = node.op
    if op == "input":
        return []
    ins = [graph.shape(i) for i in node.inputs]

    if op == "conv2d":
        ks = kernel_spec(graph, name)
        if ks.padding != "valid":
            raise GraphError(
                f"region propagation through conv2d '{name}' requires valid "
                "padding; canonicalize the graph first"
            )
        return [_window_backward(region, ks.k_h, ks.k_w, ks.stride_h, ks.stride_w, ins[0])]
    if op in POOL_OPS:
        p_h, p_w = node.attrs["size"]
        s_h, s_w = node.attrs["stride"]
        return [_window_backward(region, p_h, p_w, s_h, s_w, ins[0])]
    if op == "dense":
        return [full_region(ins[0])]
    if op == "pad":
        t, _, l, _ = node.attrs["pad"]
        src = ins[0]
        return [_clip(region.r0 - t, region.r1 - t, region.c0 - l, region.c1 - l, src.h, src.w)]
    if op == "upsample2d":
        f = node.attrs["factor"]
        return [
            _clip(region.r0 // f, -(-region.r1 // f), region.c0 // f, -(-region.c1 // f),
                  ins[0].h, ins[0].w)
        ]
    if op == "slice":
        b_h, b_w, _ = node.attrs["begin"]
        src = ins[0]
        return [
            _clip(region.r0 + b_h, region.r1 + b_h, region.c0 + b_w, region.c1 + b_w,
                  src.h, src.w)
        ]
    if op == "concat":
        axis = node.attrs["axis"]
        if axis == "c":
            return [
                _clip(region.r0, region.r1, region.c0, region.c1, s.h, s.w) for s in ins
            ]
        results: list[Region | None] = []
        offset = 0
        for s in ins:
            if axis == "h":
                results.append(
                    _clip(region.r0 - offset, region.r1 - offset, region.c0, region.c1,
                          s.h, s.w)
                )
                offset += s.h
            else:
                results.append(
                    _clip(region.r0, region.r1, region.c0 - offset, region.c1 - offset,
                          s.h, s.w)
                )
                offset += s.w
        return results
    if op in ("bias_add", "activation", "add", "output", "batchnorm"):
        return [
            _clip(region.r0, region.r1, region.c0, region.c1, s.h, s.w) for s in ins
        ]
    raise GraphError(f"region propagation does not support op '{op}'")


def propagate_to_base(graph: NNGraph, start: str, region: Region) -> dict[str, list[Region]]:
    """Propagate a required region backward until base layers are reached.

    ``start``/``region`` describe a requirement on the *output* of node
    ``start``. Returns, per producing base layer, the list of required
    regions of its output feature map (one per non-base path).
    """
    producers: dict[str, list[Region]] = {}
    stack = [(start, region)]
    seen = {(start, region.astuple())}
    while stack:
        node_name, reg = stack.pop()
        node = graph.nodes[node_name]
        if node.op in BASE_OPS:
            producers.setdefault(node_name, []).append(reg)
            continue
        if node.op == "input":
            continue
        for src, sub in zip(node.inputs, region_backward(graph, node_name, reg)):
            if sub is None:
                continue
            key = (src, sub.astuple())
            if key not in seen:
                seen.add(key)
                stack.append((src, sub))
    return producers
