"""Direct numeric evaluation of small graphs.

Slow, obviously-correct tensor semantics used to cross-check the structural
rewrites (batchnorm folding, weight duplication) against the functions they
are supposed to preserve. Integer inputs stay exact; floats accumulate in
float64.
"""
from __future__ import annotations

import numpy as np

from .ir import GraphError, NNGraph


def _conv2d(x, kernel, stride):
    k_h, k_w, k_in, k_out = kernel.shape
    s_h, s_w = stride
    o_h = (x.shape[0] - k_h) // s_h + 1
    o_w = (x.shape[1] - k_w) // s_w + 1
    out = np.zeros((o_h, o_w, k_out), dtype=np.result_type(x, kernel))
    for a in range(k_h):
        for b in range(k_w):
            window = x[a : a + (o_h - 1) * s_h + 1 : s_h, b : b + (o_w - 1) * s_w + 1 : s_w]
            out += np.tensordot(window, kernel[a, b], axes=([2], [0]))
    return out


def _pool(x, size, stride, reduce_fn):
    p_h, p_w = size
    s_h, s_w = stride
    o_h = (x.shape[0] - p_h) // s_h + 1
    o_w = (x.shape[1] - p_w) // s_w + 1
    windows = [
        x[a : a + (o_h - 1) * s_h + 1 : s_h, b : b + (o_w - 1) * s_w + 1 : s_w]
        for a in range(p_h)
        for b in range(p_w)
    ]
    return reduce_fn(np.stack(windows, axis=0))


def evaluate(graph: NNGraph, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Evaluate every node; returns name -> output array (HWC)."""
    values: dict[str, np.ndarray] = {}
    for name in graph.topo_order:
        node = graph.nodes[name]
        ins = [values[i] for i in node.inputs]
        op = node.op
        if op == "input":
            x = np.asarray(feeds[name])
            if x.shape != graph.shape(name).astuple():
                raise GraphError(
                    f"feed for '{name}' has shape {x.shape}, expected "
                    f"{graph.shape(name).astuple()}"
                )
            values[name] = x
            continue
        if op == "conv2d":
            x = ins[0]
            pad = node.attrs["padding"]
            if pad == "same":
                from .ir import kernel_spec, same_padding

                pad = same_padding(graph.shape(node.inputs[0]), kernel_spec(graph, name))
            if pad != "valid" and any(pad):
                t, b, l, r = pad
                x = np.pad(x, ((t, b), (l, r), (0, 0)))
            out = _conv2d(x, graph.weights[name]["kernel"], node.attrs["stride"])
            if node.attrs.get("bias", False):
                out = out + graph.weights[name]["bias"]
            values[name] = out
        elif op == "dense":
            flat = ins[0].reshape(-1)
            out = flat @ graph.weights[name]["kernel"]
            if node.attrs.get("bias", False):
                out = out + graph.weights[name]["bias"]
            values[name] = out.reshape(1, 1, -1)
        elif op == "pad":
            t, b, l, r = node.attrs["pad"]
            values[name] = np.pad(ins[0], ((t, b), (l, r), (0, 0)))
        elif op == "bias_add":
            bias = graph.weights.get(name, {}).get("bias", 0)
            values[name] = ins[0] + bias
        elif op == "activation":
            kind = node.attrs.get("kind", "relu")
            x = ins[0]
            if kind == "relu":
                values[name] = np.maximum(x, 0)
            elif kind == "leaky_relu":
                alpha = node.attrs.get("alpha", 0.1)
                values[name] = np.where(x > 0, x, alpha * x)
            else:
                values[name] = x
        elif op == "batchnorm":
            p = graph.weights[name]
            eps = node.attrs.get("epsilon", 1e-3)
            scale = p["gamma"] / np.sqrt(p["variance"] + eps)
            values[name] = (ins[0] - p["mean"]) * scale + p["beta"]
        elif op == "maxpool2d":
            values[name] = _pool(
                ins[0], node.attrs["size"], node.attrs["stride"],
                lambda w: np.max(w, axis=0),
            )
        elif op == "avgpool2d":
            values[name] = _pool(
                ins[0], node.attrs["size"], node.attrs["stride"],
                lambda w: np.mean(w, axis=0),
            )
        elif op == "add":
            values[name] = sum(ins[1:], ins[0])
        elif op == "concat":
            axis = "hwc".index(node.attrs["axis"])
            values[name] = np.concatenate(ins, axis=axis)
        elif op == "upsample2d":
            f = node.attrs["factor"]
            values[name] = np.repeat(np.repeat(ins[0], f, axis=0), f, axis=1)
        elif op == "slice":
            b = node.attrs["begin"]
            s = node.attrs["size"]
            values[name] = ins[0][b[0] : b[0] + s[0], b[1] : b[1] + s[1], b[2] : b[2] + s[2]]
        elif op == "output":
            values[name] = ins[0]
        else:
            raise GraphError(f"evaluator does not support op '{op}'")
    return values
