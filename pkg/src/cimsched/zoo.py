"""Benchmark model definitions.

The networks are reconstructed from their standard published architectures,
convolution layers only (no classifier heads), and are shipped as JSON model
files. `validate_models` in the bench harness gates the suite on the
expected base-layer counts, PE requirements, and per-layer shapes.
"""
from __future__ import annotations

import json


class _Builder:
    def __init__(self, name, input_shape):
        self.name = name
        self.layers = [
            {"name": "input", "op": "input", "inputs": [], "attrs": {"shape": list(input_shape)}}
        ]
        self.conv_count = 0

    def _conv_name(self):
        name = "conv2d" if self.conv_count == 0 else f"conv2d_{self.conv_count}"
        self.conv_count += 1
        return name

    def add(self, name, op, inputs, **attrs):
        self.layers.append({"name": name, "op": op, "inputs": list(inputs), "attrs": attrs})
        return name

    def conv(self, src, k, c_in, c_out, stride=1, batchnorm=True, act="leaky_relu",
             name=None, bias=None):
        """Conv block: conv2d [+ batchnorm] [+ activation]; returns the last
        tensor. Convs followed by batchnorm carry no bias of their own."""
        cname = name or self._conv_name()
        if bias is None:
            bias = not batchnorm
        self.add(cname, "conv2d", [src], kernel=[k, k, c_in, c_out],
                 stride=[stride, stride], padding="same", bias=bias)
        last = cname
        if batchnorm:
            last = self.add(f"{cname}_bn", "batchnorm", [last], epsilon=1e-3)
        if act:
            last = self.add(f"{cname}_act", "activation", [last], kind=act)
        return last

    def maxpool(self, src, name, size=2, stride=2):
        return self.add(name, "maxpool2d", [src], size=[size, size], stride=[stride, stride])

    def doc(self):
        return {"name": self.name, "layers": self.layers}


def tiny_yolo_v4() -> dict:
    """Tiny YOLOv4: CSP backbone with channel-split routes, two heads."""
    b = _Builder("tiny_yolo_v4", (416, 416, 3))
    x = b.conv("input", 3, 3, 32, stride=2)        # conv2d      208x208
    x = b.conv(x, 3, 32, 64, stride=2)             # conv2d_1    104x104
    stage_in = b.conv(x, 3, 64, 64)                # conv2d_2

    def csp_stage(tag, src, ch, hw_pool):
        half = ch // 2
        split = b.add(f"{tag}_split", "slice", [src],
                      begin=[0, 0, half], size=[hw_pool, hw_pool, half])
        y1 = b.conv(split, 3, half, half)
        y2 = b.conv(y1, 3, half, half)
        cat_inner = b.add(f"{tag}_cat_inner", "concat", [y2, y1], axis="c")
        route = b.conv(cat_inner, 1, ch, ch)
        cat_outer = b.add(f"{tag}_cat", "concat", [src, route], axis="c")
        pooled = b.maxpool(cat_outer, f"{tag}_pool")
        return pooled, route

    x, _ = csp_stage("s1", stage_in, 64, 104)      # conv2d_3..5   -> 52x52x128
    x = b.conv(x, 3, 128, 128)                     # conv2d_6
    x, _ = csp_stage("s2", x, 128, 52)             # conv2d_7..9   -> 26x26x256
    x = b.conv(x, 3, 256, 256)                     # conv2d_10
    x, neck = csp_stage("s3", x, 256, 26)          # conv2d_11..13 -> 13x13x512
    x = b.conv(x, 3, 512, 512)                     # conv2d_14
    x = b.conv(x, 1, 512, 256)                     # conv2d_15
    big = b.conv(x, 3, 256, 512)                   # conv2d_16
    head13 = b.conv(big, 1, 512, 255, batchnorm=False, act=None)  # conv2d_17
    b.add("detect_13", "output", [head13])
    y = b.conv(x, 1, 256, 128)                     # conv2d_18
    y = b.add("up", "upsample2d", [y], factor=2)
    y = b.add("neck_cat", "concat", [y, neck], axis="c")
    y = b.conv(y, 3, 384, 256)                     # conv2d_19
    head26 = b.conv(y, 1, 256, 255, batchnorm=False, act=None)    # conv2d_20
    b.add("detect_26", "output", [head26])
    return b.doc()


def tiny_yolo_v3() -> dict:
    """Tiny YOLOv3: sequential backbone with pooling, two heads."""
    b = _Builder("tiny_yolo_v3", (416, 416, 3))
    x = b.conv("input", 3, 3, 16)                  # conv2d      416x416
    x = b.maxpool(x, "pool0")
    x = b.conv(x, 3, 16, 32)                       # conv2d_1    208x208
    x = b.maxpool(x, "pool1")
    x = b.conv(x, 3, 32, 64)                       # conv2d_2    104x104
    x = b.maxpool(x, "pool2")
    x = b.conv(x, 3, 64, 128)                      # conv2d_3    52x52
    x = b.maxpool(x, "pool3")
    route = b.conv(x, 3, 128, 256)                 # conv2d_4    26x26
    x = b.maxpool(route, "pool4")
    x = b.conv(x, 3, 256, 512)                     # conv2d_5    13x13
    # stride-1 pooling keeps 13x13 via one-sided padding
    x = b.add("pool5_pad", "pad", [x], pad=[0, 1, 0, 1])
    x = b.maxpool(x, "pool5", size=2, stride=1)
    x = b.conv(x, 3, 512, 1024)                    # conv2d_6
    mid = b.conv(x, 1, 1024, 256)                  # conv2d_7
    x = b.conv(mid, 3, 256, 512)                   # conv2d_8
    head13 = b.conv(x, 1, 512, 255, batchnorm=False, act=None)    # conv2d_9
    b.add("detect_13", "output", [head13])
    y = b.conv(mid, 1, 256, 128)                   # conv2d_10
    y = b.add("up", "upsample2d", [y], factor=2)
    y = b.add("neck_cat", "concat", [y, route], axis="c")
    y = b.conv(y, 3, 384, 256)                     # conv2d_11
    head26 = b.conv(y, 1, 256, 255, batchnorm=False, act=None)    # conv2d_12
    b.add("detect_26", "output", [head26])
    return b.doc()


def _vgg(name, block_sizes) -> dict:
    """VGG backbone: 3x3 convs with bias and relu, 2x2 max pooling."""
    b = _Builder(name, (224, 224, 3))
    x = "input"
    c_in = 3
    channels = (64, 128, 256, 512, 512)
    for block, (reps, c_out) in enumerate(zip(block_sizes, channels), start=1):
        for i in range(reps):
            x = b.conv(x, 3, c_in, c_out, batchnorm=False, act="relu",
                       name=f"conv{block}_{i + 1}", bias=True)
            c_in = c_out
        x = b.maxpool(x, f"pool{block}")
    b.add("features", "output", [x])
    return b.doc()


def vgg16() -> dict:
    return _vgg("vgg16", (2, 2, 3, 3, 3))


def vgg19() -> dict:
    return _vgg("vgg19", (2, 2, 4, 4, 4))


def _resnet(name, stage_blocks) -> dict:
    """Bottleneck ResNet: 7x7 stem, four stages, stride-2 in the first 3x3
    conv of each downsampling stage, projection shortcuts."""
    b = _Builder(name, (224, 224, 3))
    x = b.conv("input", 7, 3, 64, stride=2, act="relu", name="stem")
    x = b.add("stem_pad", "pad", [x], pad=[0, 1, 0, 1])
    x = b.add("stem_pool", "maxpool2d", [x], size=[3, 3], stride=[2, 2])
    c_in = 64
    for stage, blocks in enumerate(stage_blocks, start=2):
        mid = 64 * 2 ** (stage - 2)
        c_out = mid * 4
        for blk in range(1, blocks + 1):
            tag = f"c{stage}b{blk}"
            stride = 2 if (stage > 2 and blk == 1) else 1
            y = b.conv(x, 1, c_in, mid, act="relu", name=f"{tag}_a")
            y = b.conv(y, 3, mid, mid, stride=stride, act="relu", name=f"{tag}_b")
            y = b.conv(y, 1, mid, c_out, act=None, name=f"{tag}_c")
            if blk == 1:
                shortcut = b.conv(x, 1, c_in, c_out, stride=stride, act=None,
                                  name=f"{tag}_proj")
            else:
                shortcut = x
            y = b.add(f"{tag}_add", "add", [y, shortcut])
            x = b.add(f"{tag}_out", "activation", [y], kind="relu")
            c_in = c_out
    b.add("features", "output", [x])
    return b.doc()


def resnet50() -> dict:
    return _resnet("resnet50", (3, 4, 6, 3))


def resnet101() -> dict:
    return _resnet("resnet101", (3, 4, 23, 3))


def resnet152() -> dict:
    return _resnet("resnet152", (3, 8, 36, 3))


BUILDERS = {
    "tiny_yolo_v4": tiny_yolo_v4,
    "tiny_yolo_v3": tiny_yolo_v3,
    "vgg16": vgg16,
    "vgg19": vgg19,
    "resnet50": resnet50,
    "resnet101": resnet101,
    "resnet152": resnet152,
}


def model_text(name: str) -> str:
    """Canonical JSON text of a benchmark model file."""
    return json.dumps(BUILDERS[name](), indent=1) + "\n"
