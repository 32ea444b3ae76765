"""Neural-network graph representation and the canonicalization passes.

The graph is a DAG of typed layer nodes with HWC tensor shapes. Layers are
split into *base* layers (conv2d, dense), which run on crossbar processing
elements, and *non-base* layers (everything else), which run on the
general-purpose unit of a tile and carry no crossbar cost.
"""
from __future__ import annotations

import heapq
import json
import os
from dataclasses import dataclass

OPS = frozenset({
    "input", "conv2d", "dense", "pad", "bias_add", "activation", "batchnorm",
    "maxpool2d", "avgpool2d", "add", "concat", "upsample2d", "slice", "output",
})
BASE_OPS = frozenset({"conv2d", "dense"})
POOL_OPS = frozenset({"maxpool2d", "avgpool2d"})

DEFAULT_QUANT_BITS = 4  # resolution of a crossbar cell; metadata only


class GraphError(Exception):
    """Structural problem in a network graph."""


class ParseError(GraphError):
    """Model file does not conform to the model format."""


class ShapeError(GraphError):
    """Shape inference failed or produced a non-positive dimension."""


@dataclass(frozen=True)
class TensorShape:
    """HWC tensor shape. Dense outputs are represented as (1, 1, units)."""

    h: int
    w: int
    c: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1 or self.c < 1:
            raise ShapeError(f"non-positive tensor shape {(self.h, self.w, self.c)}")

    @property
    def spatial(self) -> tuple[int, int]:
        return (self.h, self.w)

    def astuple(self) -> tuple[int, int, int]:
        return (self.h, self.w, self.c)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel of a base layer.

    Dense layers use k_h = k_w = 1 with k_in equal to the flattened input
    size. ``padding`` is "valid", "same", or an explicit
    (top, bottom, left, right) tuple; canonical graphs only contain "valid".
    """

    k_h: int
    k_w: int
    k_in: int
    k_out: int
    stride_h: int = 1
    stride_w: int = 1
    padding: str | tuple[int, int, int, int] = "valid"

    @property
    def unrolled_len(self) -> int:
        """Length of one unrolled kernel column in the GEMM view."""
        return self.k_w * self.k_h * self.k_in


@dataclass
class LayerNode:
    name: str
    op: str
    inputs: tuple[str, ...]
    attrs: dict

    @property
    def role(self) -> str:
        return "base" if self.op in BASE_OPS else "non_base"


class NNGraph:
    """A named DAG of layer nodes plus optional shapes and weight payloads.

    ``shapes`` maps node name to its output shape (filled by
    :func:`infer_shapes`). ``weights`` maps node name to a dict of named
    numeric arrays; weights are optional payloads used only by numeric
    equivalence checks, the scheduler is purely shape-driven.
    """

    def __init__(self, name, nodes, shapes=None, weights=None):
        self.name: str = name
        self.nodes: dict[str, LayerNode] = nodes
        self.shapes: dict[str, TensorShape] = dict(shapes or {})
        self.weights: dict[str, dict] = dict(weights or {})
        self._topo: list[str] | None = None

    @property
    def topo_order(self) -> list[str]:
        """Deterministic topological order (ties broken by node name)."""
        if self._topo is None:
            indeg = {n: 0 for n in self.nodes}
            succs: dict[str, list[str]] = {n: [] for n in self.nodes}
            for node in self.nodes.values():
                for src in node.inputs:
                    succs[src].append(node.name)
                    indeg[node.name] += 1
            ready = [n for n, d in indeg.items() if d == 0]
            heapq.heapify(ready)
            order = []
            while ready:
                n = heapq.heappop(ready)
                order.append(n)
                for s in succs[n]:
                    indeg[s] -= 1
                    if indeg[s] == 0:
                        heapq.heappush(ready, s)
            if len(order) != len(self.nodes):
                raise GraphError(f"graph '{self.name}' contains a cycle")
            self._topo = order
        return self._topo

    def successors(self) -> dict[str, list[str]]:
        succs: dict[str, list[str]] = {n: [] for n in self.nodes}
        for node in self.nodes.values():
            for src in node.inputs:
                succs[src].append(node.name)
        return succs

    def base_layers(self) -> list[str]:
        return [n for n in self.topo_order if self.nodes[n].op in BASE_OPS]

    def shape(self, name: str) -> TensorShape:
        try:
            return self.shapes[name]
        except KeyError:
            raise ShapeError(f"no shape inferred for node '{name}'") from None

    def clone(self) -> "NNGraph":
        """Copy with fresh node objects and attr dicts (arrays are shared)."""
        nodes = {
            n: LayerNode(v.name, v.op, tuple(v.inputs), dict(v.attrs))
            for n, v in self.nodes.items()
        }
        weights = {n: dict(w) for n, w in self.weights.items()}
        return NNGraph(self.name, nodes, dict(self.shapes), weights)


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------

_REQUIRED_ATTRS = {
    "input": {"shape"},
    "conv2d": {"kernel", "stride", "padding"},
    "dense": {"units"},
    "pad": {"pad"},
    "bias_add": set(),
    "activation": set(),
    "batchnorm": set(),
    "maxpool2d": {"size", "stride"},
    "avgpool2d": {"size", "stride"},
    "add": set(),
    "concat": {"axis"},
    "upsample2d": {"factor"},
    "slice": {"begin", "size"},
    "output": set(),
}
_OPTIONAL_ATTRS = {
    "conv2d": {"bias"},
    "dense": {"bias"},
    "activation": {"kind", "alpha"},
    "batchnorm": {"epsilon"},
}


def _check_int_list(node, key, value, length, minimum):
    if (
        not isinstance(value, list)
        or len(value) != length
        or not all(isinstance(v, int) and v >= minimum for v in value)
    ):
        raise ParseError(
            f"layer '{node}': attr '{key}' must be a list of {length} "
            f"integers >= {minimum}, got {value!r}"
        )


def _validate_attrs(name, op, attrs):
    if not isinstance(attrs, dict):
        raise ParseError(f"layer '{name}': attrs must be an object")
    allowed = _REQUIRED_ATTRS[op] | _OPTIONAL_ATTRS.get(op, set())
    for key in attrs:
        if key not in allowed:
            raise ParseError(f"layer '{name}': unknown attribute key '{key}' for op '{op}'")
    for key in _REQUIRED_ATTRS[op]:
        if key not in attrs:
            raise ParseError(f"layer '{name}': op '{op}' requires attribute '{key}'")

    if op == "input":
        _check_int_list(name, "shape", attrs["shape"], 3, 1)
    elif op == "conv2d":
        _check_int_list(name, "kernel", attrs["kernel"], 4, 1)
        _check_int_list(name, "stride", attrs["stride"], 2, 1)
        pad = attrs["padding"]
        if pad not in ("valid", "same"):
            _check_int_list(name, "padding", pad, 4, 0)
        if not isinstance(attrs.get("bias", False), bool):
            raise ParseError(f"layer '{name}': attr 'bias' must be a boolean")
    elif op == "dense":
        if not isinstance(attrs["units"], int) or attrs["units"] < 1:
            raise ParseError(f"layer '{name}': attr 'units' must be a positive integer")
        if not isinstance(attrs.get("bias", False), bool):
            raise ParseError(f"layer '{name}': attr 'bias' must be a boolean")
    elif op in POOL_OPS:
        _check_int_list(name, "size", attrs["size"], 2, 1)
        _check_int_list(name, "stride", attrs["stride"], 2, 1)
    elif op == "pad":
        _check_int_list(name, "pad", attrs["pad"], 4, 0)
    elif op == "concat":
        if attrs["axis"] not in ("h", "w", "c"):
            raise ParseError(f"layer '{name}': concat axis must be 'h', 'w' or 'c'")
    elif op == "upsample2d":
        if not isinstance(attrs["factor"], int) or attrs["factor"] < 1:
            raise ParseError(f"layer '{name}': attr 'factor' must be a positive integer")
    elif op == "slice":
        _check_int_list(name, "begin", attrs["begin"], 3, 0)
        _check_int_list(name, "size", attrs["size"], 3, 1)
    elif op == "activation":
        kind = attrs.get("kind", "relu")
        if kind not in ("relu", "leaky_relu", "linear"):
            raise ParseError(f"layer '{name}': unknown activation kind '{kind}'")
    elif op == "batchnorm":
        eps = attrs.get("epsilon", 1e-3)
        if not isinstance(eps, (int, float)) or eps <= 0:
            raise ParseError(f"layer '{name}': attr 'epsilon' must be positive")


def parse_model(text: str, base_dir: str | None = None) -> NNGraph:
    """Parse a JSON model file into a graph (no shape inference).

    ``base_dir`` resolves an optional relative ``weights`` npz reference.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("layers"), list):
        raise ParseError("model file must be an object with a 'layers' list")
    name = doc.get("name", "model")

    nodes: dict[str, LayerNode] = {}
    for entry in doc["layers"]:
        if not isinstance(entry, dict):
            raise ParseError(f"layer entries must be objects, got {entry!r}")
        lname = entry.get("name")
        if not isinstance(lname, str) or not lname:
            raise ParseError(f"layer is missing a name: {entry!r}")
        if lname in nodes:
            raise ParseError(f"duplicate node name '{lname}'")
        op = entry.get("op")
        if op not in OPS:
            raise ParseError(f"layer '{lname}': unknown op '{op}'")
        inputs = entry.get("inputs", [])
        if not isinstance(inputs, list) or not all(isinstance(i, str) for i in inputs):
            raise ParseError(f"layer '{lname}': inputs must be a list of node names")
        attrs = entry.get("attrs", {})
        _validate_attrs(lname, op, attrs)
        if op == "input" and inputs:
            raise ParseError(f"input layer '{lname}' must not have inputs")
        if op in ("add", "concat") and len(inputs) < 2:
            raise ParseError(f"layer '{lname}': op '{op}' needs at least two inputs")
        if op not in ("input", "add", "concat") and len(inputs) != 1:
            raise ParseError(f"layer '{lname}': op '{op}' takes exactly one input")
        nodes[lname] = LayerNode(lname, op, tuple(inputs), dict(attrs))

    for node in nodes.values():
        for src in node.inputs:
            if src not in nodes:
                raise ParseError(
                    f"layer '{node.name}' references undefined node '{src}'"
                )

    weights: dict[str, dict] = {}
    wref = doc.get("weights")
    if wref is not None:
        import numpy as np

        path = wref if os.path.isabs(wref) else os.path.join(base_dir or ".", wref)
        with np.load(path) as payload:
            for key in payload.files:
                layer, _, param = key.partition("/")
                weights.setdefault(layer, {})[param] = payload[key]

    graph = NNGraph(name, nodes, weights=weights)
    graph.topo_order  # validates acyclicity eagerly
    return graph


def load_model(path: str) -> NNGraph:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_model(text, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# Shape inference
# ---------------------------------------------------------------------------

def _pad_amounts_same(size: int, k: int, stride: int) -> tuple[int, int]:
    """Explicit padding equivalent to "same"; the extra unit goes last."""
    out = -(-size // stride)
    total = max(0, (out - 1) * stride + k - size)
    return total // 2, total - total // 2


def same_padding(shape: TensorShape, kernel: KernelSpec) -> tuple[int, int, int, int]:
    top, bottom = _pad_amounts_same(shape.h, kernel.k_h, kernel.stride_h)
    left, right = _pad_amounts_same(shape.w, kernel.k_w, kernel.stride_w)
    return (top, bottom, left, right)


def kernel_spec(graph: NNGraph, name: str) -> KernelSpec:
    """KernelSpec of a base layer; dense kernels flatten the input tensor."""
    node = graph.nodes[name]
    if node.op == "conv2d":
        k_h, k_w, k_in, k_out = node.attrs["kernel"]
        s_h, s_w = node.attrs["stride"]
        pad = node.attrs["padding"]
        if isinstance(pad, list):
            pad = tuple(pad)
        return KernelSpec(k_h, k_w, k_in, k_out, s_h, s_w, pad)
    if node.op == "dense":
        ishape = graph.shape(node.inputs[0])
        return KernelSpec(1, 1, ishape.h * ishape.w * ishape.c, node.attrs["units"])
    raise GraphError(f"node '{name}' ({node.op}) has no kernel")


def _conv_out_dim(size: int, k: int, stride: int) -> int:
    out = (size - k) // stride + 1
    if size < k or out < 1:
        raise ShapeError(f"kernel {k} (stride {stride}) does not fit input extent {size}")
    return out


def _infer_node_shape(graph: NNGraph, node: LayerNode) -> TensorShape:
    ins = [graph.shape(i) for i in node.inputs]
    op = node.op
    if op == "input":
        h, w, c = node.attrs["shape"]
        return TensorShape(h, w, c)
    if op == "conv2d":
        (src,) = ins
        k_h, k_w, k_in, k_out = node.attrs["kernel"]
        s_h, s_w = node.attrs["stride"]
        pad = node.attrs["padding"]
        if k_in != src.c:
            raise ShapeError(
                f"conv2d '{node.name}' expects {k_in} input channels, got {src.c}"
            )
        if pad == "same":
            return TensorShape(-(-src.h // s_h), -(-src.w // s_w), k_out)
        h, w = src.h, src.w
        if pad != "valid":
            t, b, l, r = pad
            h, w = h + t + b, w + l + r
        return TensorShape(_conv_out_dim(h, k_h, s_h), _conv_out_dim(w, k_w, s_w), k_out)
    if op == "dense":
        return TensorShape(1, 1, node.attrs["units"])
    if op == "pad":
        (src,) = ins
        t, b, l, r = node.attrs["pad"]
        return TensorShape(src.h + t + b, src.w + l + r, src.c)
    if op in POOL_OPS:
        (src,) = ins
        p_h, p_w = node.attrs["size"]
        s_h, s_w = node.attrs["stride"]
        return TensorShape(
            _conv_out_dim(src.h, p_h, s_h), _conv_out_dim(src.w, p_w, s_w), src.c
        )
    if op in ("bias_add", "activation", "batchnorm", "output"):
        return ins[0]
    if op == "add":
        if any(s != ins[0] for s in ins):
            raise ShapeError(
                f"add '{node.name}' requires equal input shapes, got "
                f"{[s.astuple() for s in ins]}"
            )
        return ins[0]
    if op == "concat":
        axis = node.attrs["axis"]
        idx = "hwc".index(axis)
        ref = list(ins[0].astuple())
        for s in ins[1:]:
            other = list(s.astuple())
            if [v for i, v in enumerate(other) if i != idx] != [
                v for i, v in enumerate(ref) if i != idx
            ]:
                raise ShapeError(
                    f"concat '{node.name}' inputs differ on non-{axis} dims"
                )
            ref[idx] += other[idx]
        return TensorShape(*ref)
    if op == "upsample2d":
        (src,) = ins
        f = node.attrs["factor"]
        return TensorShape(src.h * f, src.w * f, src.c)
    if op == "slice":
        (src,) = ins
        b = node.attrs["begin"]
        size = node.attrs["size"]
        for off, length, extent in zip(b, size, src.astuple()):
            if off + length > extent:
                raise ShapeError(
                    f"slice '{node.name}' [{off}:{off + length}) exceeds extent {extent}"
                )
        return TensorShape(*size)
    raise GraphError(f"cannot infer shape for op '{op}'")


def infer_shapes(graph: NNGraph) -> NNGraph:
    """Return a copy of the graph with every node's output shape filled in.

    Deterministic and order-independent: shapes are a pure function of the
    graph, whichever valid topological order is used.
    """
    out = graph.clone()
    out.shapes = {}
    for name in out.topo_order:
        out.shapes[name] = _infer_node_shape(out, out.nodes[name])
    return out


# ---------------------------------------------------------------------------
# Canonicalization passes
# ---------------------------------------------------------------------------

def _rewire(graph: NNGraph, old: str, new: str, skip: frozenset[str]):
    for node in graph.nodes.values():
        if node.name in skip:
            continue
        if old in node.inputs:
            node.inputs = tuple(new if i == old else i for i in node.inputs)


def _unique_name(graph: NNGraph, candidate: str) -> str:
    name = candidate
    while name in graph.nodes:
        name += "_"
    return name


def fold_batchnorm(graph: NNGraph) -> NNGraph:
    """Fold every batchnorm into its preceding base layer.

    The batchnorm node is removed and the base layer gains (or keeps) a bias.
    When numeric parameters are present the kernel and bias are rescaled so
    the folded graph computes the same function:
    kernel' = kernel * g / sqrt(var + eps), bias' = (bias - mean) * g /
    sqrt(var + eps) + b for per-channel parameters (g, b, mean, var).
    """
    out = graph.clone()
    bn_names = [n for n in out.topo_order if out.nodes[n].op == "batchnorm"]
    for name in bn_names:
        node = out.nodes[name]
        prev = out.nodes[node.inputs[0]]
        bias_node = None
        if prev.op == "bias_add":
            bias_node = prev
            base = out.nodes[prev.inputs[0]]
        else:
            base = prev
        if base.op not in BASE_OPS:
            raise GraphError(
                f"batchnorm '{name}' has no conv2d/dense predecessor to fold into"
            )
        if base.attrs.get("bn_folded"):
            raise GraphError(f"batchnorm '{name}' folds into already-folded '{base.name}'")

        params = out.weights.get(name)
        base_weights = out.weights.get(base.name, {})
        scale = shift = None
        if params is not None and "kernel" in base_weights:
            import numpy as np

            eps = node.attrs.get("epsilon", 1e-3)
            scale = params["gamma"] / np.sqrt(params["variance"] + eps)
            shift = params["beta"] - params["mean"] * scale
            base_weights = dict(base_weights)
            base_weights["kernel"] = base_weights["kernel"] * scale
            out.weights[base.name] = base_weights

        if bias_node is not None:
            target = bias_node.name
            if scale is not None:
                bw = dict(out.weights.get(target, {}))
                bw["bias"] = bw.get("bias", 0) * scale + shift
                out.weights[target] = bw
        elif base.attrs.get("bias", False):
            target = base.name  # implicit bias stays inside the base layer
            if scale is not None:
                bw = out.weights[base.name]
                bw["bias"] = bw.get("bias", 0) * scale + shift
        else:
            target = _unique_name(out, f"{base.name}_bias")
            out.nodes[target] = LayerNode(target, "bias_add", (base.name,), {})
            if base.name in out.shapes:
                out.shapes[target] = out.shapes[base.name]
            if scale is not None:
                out.weights[target] = {"bias": shift}

        _rewire(out, name, target, skip=frozenset({target, name}))
        del out.nodes[name]
        out.shapes.pop(name, None)
        out.weights.pop(name, None)
        base.attrs["bn_folded"] = True
        out._topo = None
    return out


def canonicalize(graph: NNGraph) -> NNGraph:
    """Make padding and bias explicit and annotate base layers.

    After this pass every conv2d uses valid padding behind an explicit pad
    node, every fused bias is a bias_add node, and base layers carry their
    quantization bit-width annotation. Idempotent.
    """
    for name in graph.nodes:
        if name not in graph.shapes:
            raise GraphError("canonicalize requires inferred shapes; run infer_shapes")
    if any(n.op == "batchnorm" for n in graph.nodes.values()):
        raise GraphError("canonicalize requires a batchnorm-free graph; run fold_batchnorm")

    out = graph.clone()
    for name in list(out.topo_order):
        node = out.nodes[name]
        if node.op == "conv2d":
            pad = node.attrs["padding"]
            src = out.shapes[node.inputs[0]]
            if pad == "same":
                pad = same_padding(src, kernel_spec(out, name))
            elif isinstance(pad, list):
                pad = tuple(pad)
            if pad != "valid" and any(pad):
                pad_name = _unique_name(out, f"{name}_pad")
                out.nodes[pad_name] = LayerNode(
                    pad_name, "pad", (node.inputs[0],), {"pad": list(pad)}
                )
                t, b, l, r = pad
                out.shapes[pad_name] = TensorShape(src.h + t + b, src.w + l + r, src.c)
                node.inputs = (pad_name,)
            node.attrs["padding"] = "valid"
        if node.op in BASE_OPS:
            if node.attrs.get("bias", False):
                bias_name = _unique_name(out, f"{name}_bias")
                _rewire(out, name, bias_name, skip=frozenset({bias_name, name}))
                out.nodes[bias_name] = LayerNode(bias_name, "bias_add", (name,), {})
                out.shapes[bias_name] = out.shapes[name]
                node.attrs["bias"] = False
                if "bias" in out.weights.get(name, {}):
                    out.weights[bias_name] = {"bias": out.weights[name].pop("bias")}
            node.attrs.setdefault("quant_bits", DEFAULT_QUANT_BITS)
        out._topo = None
    return out


def prepare(graph: NNGraph) -> NNGraph:
    """Full preprocessing pipeline: shapes, batchnorm folding, canonical form."""
    return canonicalize(fold_batchnorm(infer_shapes(graph)))
