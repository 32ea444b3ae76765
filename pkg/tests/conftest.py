"""Shared helpers: graph builders, a random canonical-graph generator, and an
element-level influence oracle used to cross-check region propagation."""
from __future__ import annotations

import itertools
import json
import random

import numpy as np

from cimsched.ir import LayerNode, NNGraph, infer_shapes, parse_model
from cimsched.scheduling import SetPartition


def build_graph(layers, name="test", weights=None) -> NNGraph:
    """Parse a graph from layer dicts (exercises the model-file path)."""
    graph = parse_model(json.dumps({"name": name, "layers": layers}))
    graph.weights = weights or {}
    return graph


def layer(name, op, inputs=(), **attrs):
    return {"name": name, "op": op, "inputs": list(inputs), "attrs": attrs}


def conv_layer(name, src, k, c_in, c_out, stride=1, padding="valid", bias=False):
    return layer(name, "conv2d", [src], kernel=[k, k, c_in, c_out],
                 stride=[stride, stride], padding=padding, bias=bias)


def ones_weights(graph: NNGraph) -> NNGraph:
    """Attach all-ones kernels to every conv so influence probing works."""
    for node in graph.nodes.values():
        if node.op == "conv2d":
            k_h, k_w, k_in, k_out = node.attrs["kernel"]
            graph.weights[node.name] = {"kernel": np.ones((k_h, k_w, k_in, k_out),
                                                          dtype=np.int64)}
    return graph


# ---------------------------------------------------------------------------
# Random canonical graphs (small, shape-valid, conv-based)
# ---------------------------------------------------------------------------

def random_canonical_graph(rng: random.Random) -> NNGraph:
    """A small canonical graph: 2-3 conv layers joined by a random non-base
    path (pads, pools, activations, upsampling, slices, adds, concats)."""
    h = rng.randint(6, 12)
    w = rng.randint(6, 12)
    c = rng.choice((2, 3, 4))
    layers = [layer("input", "input", shape=[h, w, c])]
    src, cur_h, cur_w, cur_c = "input", h, w, c
    n_convs = rng.randint(2, 3)
    for i in range(n_convs):
        k = rng.choice((1, 2, 3))
        s = rng.choice((1, 1, 2))
        if rng.random() < 0.4:
            t, b, l, r = (rng.randint(0, 1) for _ in range(4))
            if t + b + l + r:
                layers.append(layer(f"pad{i}", "pad", [src], pad=[t, b, l, r]))
                src, cur_h, cur_w = f"pad{i}", cur_h + t + b, cur_w + l + r
        k = min(k, cur_h, cur_w)
        c_out = rng.choice((2, 3, 4))
        layers.append(conv_layer(f"conv{i}", src, k, cur_c, c_out, stride=s))
        src = f"conv{i}"
        cur_h, cur_w, cur_c = (cur_h - k) // s + 1, (cur_w - k) // s + 1, c_out
        if i == n_convs - 1:
            break
        choice = rng.random()
        if choice < 0.25 and cur_h >= 3 and cur_w >= 3:
            p = rng.choice((2, 3))
            ps = rng.choice((1, 2))
            layers.append(layer(f"pool{i}", "maxpool2d" if rng.random() < 0.5
                                else "avgpool2d", [src], size=[p, p], stride=[ps, ps]))
            src = f"pool{i}"
            cur_h, cur_w = (cur_h - p) // ps + 1, (cur_w - p) // ps + 1
        elif choice < 0.4 and cur_h <= 8 and cur_w <= 8:
            layers.append(layer(f"up{i}", "upsample2d", [src], factor=2))
            src, cur_h, cur_w = f"up{i}", cur_h * 2, cur_w * 2
        elif choice < 0.55 and cur_h >= 4 and cur_w >= 4:
            layers.append(layer(f"slice{i}", "slice", [src], begin=[1, 1, 0],
                                size=[cur_h - 1, cur_w - 1, cur_c]))
            src, cur_h, cur_w = f"slice{i}", cur_h - 1, cur_w - 1
        elif choice < 0.7:
            # residual join of two views of the same tensor
            layers.append(layer(f"act{i}", "activation", [src], kind="relu"))
            layers.append(layer(f"add{i}", "add", [src, f"act{i}"]))
            src = f"add{i}"
        elif choice < 0.85:
            layers.append(layer(f"actl{i}", "activation", [src], kind="leaky_relu"))
            layers.append(layer(f"catc{i}", "concat", [src, f"actl{i}"], axis="c"))
            src, cur_c = f"catc{i}", cur_c * 2
        else:
            layers.append(layer(f"bias{i}", "bias_add", [src]))
            src = f"bias{i}"
        if rng.random() < 0.5:
            layers.append(layer(f"a{i}", "activation", [src], kind="relu"))
            src = f"a{i}"
    layers.append(layer("out", "output", [src]))
    return infer_shapes(build_graph(layers, name=f"rand{rng.random():.6f}"))


# ---------------------------------------------------------------------------
# Brute-force region oracle
# ---------------------------------------------------------------------------

def region_bruteforce_edges(graph: NNGraph, partitions: dict[str, SetPartition]):
    """Data edges by plain recursive propagation and all-pairs intersection
    tests; no deduplication and no grid lookups."""
    from cimsched.ir import BASE_OPS
    from cimsched.regions import region_backward

    base = [n for n in graph.topo_order if graph.nodes[n].op in BASE_OPS]
    edges = set()

    def walk(name, reg, sink):
        node = graph.nodes[name]
        if node.op in BASE_OPS:
            sink.append((name, reg))
            return
        if node.op == "input":
            return
        for src, sub in zip(node.inputs, region_backward(graph, name, reg)):
            if sub is not None:
                walk(src, sub, sink)

    for consumer in base:
        for idx, region in enumerate(partitions[consumer].sets):
            found = []
            for src, need in zip(
                graph.nodes[consumer].inputs, region_backward(graph, consumer, region)
            ):
                if need is not None:
                    walk(src, need, found)
            for producer, reg in found:
                for pidx, pset in enumerate(partitions[producer].sets):
                    if pset.intersects(reg):
                        edges.add(((producer, pidx), (consumer, idx)))
    return edges


def has_strided_holes(graph: NNGraph) -> bool:
    """True when some conv kernel is narrower than its stride; required
    regions then have gaps and their rectangular hull is conservative."""
    for node in graph.nodes.values():
        if node.op == "conv2d":
            k_h, k_w, _, _ = node.attrs["kernel"]
            s_h, s_w = node.attrs["stride"]
            if k_h < s_h or k_w < s_w:
                return True
    return False


# ---------------------------------------------------------------------------
# Element-level influence oracle
# ---------------------------------------------------------------------------

def _probe_variant(graph: NNGraph, keep: str) -> NNGraph:
    """Replace every base layer except ``keep`` with an input of its OFM
    shape, so producer outputs can be perturbed directly."""
    variant = graph.clone()
    for name in list(variant.nodes):
        node = variant.nodes[name]
        if node.op in ("conv2d", "dense") and name != keep:
            variant.nodes[name] = LayerNode(
                name, "input", (), {"shape": list(graph.shape(name).astuple())}
            )
            variant.weights.pop(name, None)
    variant._topo = None
    return variant


def influence_edges(graph: NNGraph, partitions: dict[str, SetPartition]):
    """Brute-force data edges by perturbing every producer element and
    observing which consumer output elements change. Independent of the
    interval arithmetic used by the scheduler."""
    from cimsched.reference import evaluate

    base = [n for n in graph.topo_order if graph.nodes[n].op in ("conv2d", "dense")]
    edges = set()
    for consumer in base:
        variant = _probe_variant(graph, keep=consumer)
        feed_names = [n for n in variant.topo_order if variant.nodes[n].op == "input"]
        zeros = {
            n: np.zeros(variant.shape(n).astuple(), dtype=np.int64) for n in feed_names
        }
        for producer in base:
            if producer == consumer or producer not in feed_names:
                continue
            pshape = graph.shape(producer)
            for i, j in itertools.product(range(pshape.h), range(pshape.w)):
                feeds = dict(zeros)
                probe = np.zeros(pshape.astuple(), dtype=np.int64)
                probe[i, j, 0] = 1
                feeds[producer] = probe
                out = evaluate(variant, feeds)[consumer]
                mask = np.nonzero(out.any(axis=2))
                if not mask[0].size:
                    continue
                p_sets = {
                    idx
                    for idx, reg in enumerate(partitions[producer].sets)
                    if reg.r0 <= i < reg.r1 and reg.c0 <= j < reg.c1
                }
                c_sets = set()
                for u, v in zip(*mask):
                    for idx, reg in enumerate(partitions[consumer].sets):
                        if reg.r0 <= u < reg.r1 and reg.c0 <= v < reg.c1:
                            c_sets.add(idx)
                for p_idx in p_sets:
                    for c_idx in c_sets:
                        edges.add(((producer, p_idx), (consumer, c_idx)))
    return edges
