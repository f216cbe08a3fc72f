"""Residual blocks with pluggable attention and the ResNet / MSRResNet builders."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .attention import NONE, AttentionKind, make_attention
from .nn import BatchNorm2d, Conv2d, Identity, Linear, MaxPool2d, Module, ReLU, Sequential
from .tensor import ShapeError, add, flatten, leaky_relu, relu

RESNET_STAGES = {
    18: ("basic", (2, 2, 2, 2)),
    50: ("bottleneck", (3, 4, 6, 3)),
    101: ("bottleneck", (3, 4, 23, 3)),
}
EXPANSION = 4
SR_RES_INIT_SCALE = 0.1
LRELU_SLOPE = 0.1


@dataclass(frozen=True)
class BlockSpec:
    kind: str  # basic | bottleneck | compact_sr
    in_channels: int
    out_channels: int
    stride: int = 1
    attention: AttentionKind = NONE

    def __post_init__(self):
        if self.kind not in ("basic", "bottleneck", "compact_sr"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.kind == "bottleneck" and self.out_channels % EXPANSION:
            raise ValueError("bottleneck out_channels must be a multiple of 4")
        if self.kind == "compact_sr" and (self.in_channels != self.out_channels or self.stride != 1):
            raise ValueError("compact SR blocks preserve channels and spatial size")


@dataclass(frozen=True)
class ModelSpec:
    family: str = "msrresnet"  # resnet | msrresnet
    depth: int = 18
    num_classes: int = 1000
    stem: str = "imagenet"  # imagenet | cifar
    attention: AttentionKind = NONE
    upscale: int = 4
    num_blocks: int = 16
    width: int = 64
    in_channels: int = 3
    stage_blocks: tuple[int, ...] | None = None
    bottleneck_stride: str = "1x1"  # which bottleneck conv carries the stride

    def __post_init__(self):
        if self.family == "resnet":
            if self.depth not in RESNET_STAGES:
                raise ValueError(f"unsupported ResNet depth {self.depth}; choose 18, 50 or 101")
            if self.stem not in ("imagenet", "cifar"):
                raise ValueError(f"unknown stem {self.stem!r}")
            if self.bottleneck_stride not in ("1x1", "3x3"):
                raise ValueError("bottleneck_stride must be '1x1' or '3x3'")
        elif self.family == "msrresnet":
            if self.upscale != 4:
                raise ValueError("MSRResNet is built for x4 upscaling only")
        else:
            raise ValueError(f"unknown model family {self.family!r}")

    @property
    def block_kind(self) -> str:
        return RESNET_STAGES[self.depth][0] if self.family == "resnet" else "compact_sr"

    @property
    def stages(self) -> tuple[int, ...]:
        return self.stage_blocks or RESNET_STAGES[self.depth][1]

    @property
    def name(self) -> str:
        base = f"resnet{self.depth}" if self.family == "resnet" else "msrresnet"
        return base if self.attention.kind == "none" else f"{base}+{self.attention}"

    def with_attention(self, attention: AttentionKind) -> ModelSpec:
        return replace(self, attention=attention)


def resnet_spec(depth: int, attention: AttentionKind = NONE, **kw) -> ModelSpec:
    return ModelSpec(family="resnet", depth=depth, attention=attention, **kw)


def msrresnet_spec(attention: AttentionKind = NONE, **kw) -> ModelSpec:
    return ModelSpec(family="msrresnet", attention=attention, **kw)


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

class BasicBlock(Module):
    """conv3x3-BN-relu-conv3x3-BN, attention on the branch, add shortcut, relu."""

    def __init__(self, spec: BlockSpec, rng=None):
        super().__init__()
        cin, cout, s = spec.in_channels, spec.out_channels, spec.stride
        self.conv1 = Conv2d(cin, cout, 3, s, 1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(cout)
        self.attn = make_attention(spec.attention, cout, rng=rng)
        self.shortcut = _projection(cin, cout, s, rng)

    def forward(self, x):
        out = relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.attn is not None:
            out = self.attn(out)
        return relu(_residual_add(out, self.shortcut(x)))


class Bottleneck(Module):
    """1x1 reduce, 3x3, 1x1 expand (x4); attention on the expanded branch."""

    def __init__(self, spec: BlockSpec, rng=None, stride_on: str = "1x1"):
        super().__init__()
        cin, cout, s = spec.in_channels, spec.out_channels, spec.stride
        mid = cout // EXPANSION
        s1, s3 = (s, 1) if stride_on == "1x1" else (1, s)
        self.conv1 = Conv2d(cin, mid, 1, s1, 0, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(mid)
        self.conv2 = Conv2d(mid, mid, 3, s3, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(mid)
        self.conv3 = Conv2d(mid, cout, 1, 1, 0, bias=False, rng=rng)
        self.bn3 = BatchNorm2d(cout)
        self.attn = make_attention(spec.attention, cout, rng=rng)
        self.shortcut = _projection(cin, cout, s, rng)

    def forward(self, x):
        out = relu(self.bn1(self.conv1(x)))
        out = relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        if self.attn is not None:
            out = self.attn(out)
        return relu(_residual_add(out, self.shortcut(x)))


class SRBlock(Module):
    """Compact residual block without batch norm: conv-relu-conv, attention, + x."""

    def __init__(self, spec: BlockSpec, rng=None, init_scale: float = SR_RES_INIT_SCALE):
        super().__init__()
        c = spec.in_channels
        self.conv1 = Conv2d(c, c, 3, rng=rng, init_scale=init_scale)
        self.conv2 = Conv2d(c, c, 3, rng=rng, init_scale=init_scale)
        self.attn = make_attention(spec.attention, c, rng=rng)

    def forward(self, x):
        out = self.conv2(relu(self.conv1(x)))
        if self.attn is not None:
            out = self.attn(out)
        return _residual_add(out, x)


class Projection(Module):
    def __init__(self, cin, cout, stride, rng=None):
        super().__init__()
        self.conv = Conv2d(cin, cout, 1, stride, 0, bias=False, rng=rng)
        self.bn = BatchNorm2d(cout)

    def forward(self, x):
        return self.bn(self.conv(x))


def _projection(cin, cout, stride, rng) -> Module:
    return Projection(cin, cout, stride, rng) if stride != 1 or cin != cout else Identity()


def _residual_add(branch, shortcut):
    if branch.shape != shortcut.shape:
        raise ShapeError(f"residual branch {branch.shape} does not match shortcut {shortcut.shape}")
    return add(branch, shortcut)


def make_block(spec: BlockSpec, rng=None, **kw) -> Module:
    cls = {"basic": BasicBlock, "bottleneck": Bottleneck, "compact_sr": SRBlock}[spec.kind]
    return cls(spec, rng=rng, **kw)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class ResNet(Module):
    def __init__(self, spec: ModelSpec, rng=None):
        super().__init__()
        self.spec = spec
        w = spec.width
        if spec.stem == "imagenet":
            self.stem = Sequential(
                Conv2d(spec.in_channels, w, 7, 2, 3, bias=False, rng=rng), BatchNorm2d(w), ReLU(), MaxPool2d(3, 2, 1)
            )
        else:
            self.stem = Sequential(Conv2d(spec.in_channels, w, 3, 1, 1, bias=False, rng=rng), BatchNorm2d(w), ReLU())
        expansion = 1 if spec.block_kind == "basic" else EXPANSION
        cin = w
        for i, n_blocks in enumerate(spec.stages):
            cout = w * 2**i * expansion
            blocks = []
            for j in range(n_blocks):
                stride = 2 if (j == 0 and i > 0) else 1
                bspec = BlockSpec(spec.block_kind, cin, cout, stride, spec.attention)
                kw = {"stride_on": spec.bottleneck_stride} if spec.block_kind == "bottleneck" else {}
                blocks.append(make_block(bspec, rng=rng, **kw))
                cin = cout
            setattr(self, f"layer{i + 1}", Sequential(*blocks))
        self.n_stages = len(spec.stages)
        self.fc = Linear(cin, spec.num_classes, rng=rng)

    def forward(self, x):
        out = self.stem(x)
        for i in range(self.n_stages):
            out = getattr(self, f"layer{i + 1}")(out)
        return self.fc(flatten(ops.global_avg_pool(out)))


class MSRResNet(Module):
    """conv-first, compact residual trunk, two pixel-shuffle x2 stages, HR convs,
    plus a global bilinear x4 skip of the input."""

    def __init__(self, spec: ModelSpec, rng=None):
        super().__init__()
        self.spec = spec
        nf, c = spec.width, spec.in_channels
        self.conv_first = Conv2d(c, nf, 3, rng=rng)
        self.body = Sequential(
            *[make_block(BlockSpec("compact_sr", nf, nf, 1, spec.attention), rng=rng) for _ in range(spec.num_blocks)]
        )
        self.upconv1 = Conv2d(nf, nf * 4, 3, rng=rng)
        self.upconv2 = Conv2d(nf, nf * 4, 3, rng=rng)
        self.hr_conv = Conv2d(nf, nf, 3, rng=rng)
        self.conv_last = Conv2d(nf, c, 3, rng=rng, init_scale=SR_RES_INIT_SCALE)

    def forward(self, x):
        fea = leaky_relu(self.conv_first(x), LRELU_SLOPE)
        out = self.body(fea)
        out = leaky_relu(ops.pixel_shuffle(self.upconv1(out), 2), LRELU_SLOPE)
        out = leaky_relu(ops.pixel_shuffle(self.upconv2(out), 2), LRELU_SLOPE)
        out = self.conv_last(leaky_relu(self.hr_conv(out), LRELU_SLOPE))
        return out + ops.upsample_bilinear(x, self.spec.upscale)


def build_resnet(spec: ModelSpec, seed: int = 0) -> ResNet:
    if spec.family != "resnet":
        raise ValueError("build_resnet needs a resnet ModelSpec")
    return ResNet(spec, rng=np.random.default_rng(seed))


def build_msrresnet(spec: ModelSpec, seed: int = 0) -> MSRResNet:
    if spec.family != "msrresnet":
        raise ValueError("build_msrresnet needs a msrresnet ModelSpec")
    return MSRResNet(spec, rng=np.random.default_rng(seed))


def build_model(spec: ModelSpec, seed: int = 0) -> Module:
    return build_resnet(spec, seed) if spec.family == "resnet" else build_msrresnet(spec, seed)


MODEL_NAMES = ("resnet18", "resnet50", "resnet101", "msrresnet")


def spec_from_name(name: str, attention: AttentionKind = NONE, **kw) -> ModelSpec:
    if name == "msrresnet":
        return msrresnet_spec(attention, **kw)
    if name.startswith("resnet") and name[6:].isdigit():
        return resnet_spec(int(name[6:]), attention, **kw)
    raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
