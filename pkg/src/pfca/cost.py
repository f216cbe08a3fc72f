"""Parameter and multiply-accumulate accounting derived from a ModelSpec.

The analyzer re-derives every layer's shape from the declarative spec rather
than inspecting a built network, so its totals can be checked against a plain
walk over a network's ParamStore.

Headline cost is the MAC count of convolutions and linear layers. Bias adds,
normalization, activations, pooling, attention statistics and elementwise
products are tallied separately as ``elementwise`` operations (one per output
element per primitive step; pooling counts one per input element).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .attention import AttentionKind
from .models import EXPANSION, ModelSpec
from .nn import Module
from .ops import conv_output_size
from .tensor import ShapeError

GROUPS = ("stem", "body", "head")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    group: str
    params: int
    macs: int
    elementwise: int
    out_shape: tuple[int, int, int, int]


@dataclass
class CostReport:
    model: str
    input_shape: tuple[int, int, int, int]
    rows: list[LayerSpec] = field(default_factory=list)
    excluded: tuple[str, ...] = ()

    def _kept(self):
        return [r for r in self.rows if r.group not in self.excluded]

    @property
    def params(self) -> int:
        return sum(r.params for r in self._kept())

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self._kept())

    @property
    def elementwise(self) -> int:
        return sum(r.elementwise for r in self._kept())

    @property
    def is_sr(self) -> bool:
        return self.model.startswith("msrresnet")

    def convention(self) -> str:
        return "full model" if not self.excluded else f"excluding {','.join(self.excluded)}"

    def render(self, per_layer: bool = True) -> str:
        out = io.StringIO()
        out.write(f"model {self.model}  input {'x'.join(map(str, self.input_shape))}  ({self.convention()})\n")
        if per_layer:
            out.write(f"{'layer':<34s} {'kind':<12s} {'group':<5s} {'params':>10s} {'MACs':>14s} {'elementwise':>13s}\n")
            for r in self.rows:
                mark = " " if r.group not in self.excluded else "-"
                out.write(
                    f"{mark}{r.name:<33s} {r.kind:<12s} {r.group:<5s} {r.params:>10d} {r.macs:>14d} {r.elementwise:>13d}\n"
                )
        out.write(f"params  {self.params:,d} ({format_params(self.params, self.is_sr)})\n")
        out.write(f"MACs    {self.macs:,d} ({self.macs / 1e9:.2f} G)\n")
        out.write(f"elementwise ops (not in MACs) {self.elementwise:,d}\n")
        return out.getvalue()


def format_params(n: int, sr: bool) -> str:
    return f"{n / 1e3:.1f} K" if sr else f"{n / 1e6:.2f} M"


class _Walker:
    def __init__(self, shape):
        self.shape = tuple(shape)
        self.rows: list[LayerSpec] = []

    def emit(self, name, kind, group, params=0, macs=0, elementwise=0, shape=None):
        if shape is not None:
            self.shape = shape
        self.rows.append(LayerSpec(name, kind, group, params, macs, elementwise, self.shape))

    def elems(self, shape=None) -> int:
        n, c, h, w = shape or self.shape
        return n * c * h * w

    def conv(self, name, group, cout, k, stride=1, padding=None, bias=True):
        n, cin, h, w = self.shape
        p = k // 2 if padding is None else padding
        ho, wo = conv_output_size(h, k, stride, p), conv_output_size(w, k, stride, p)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{name}: input {h}x{w} too small")
        params = cout * cin * k * k + (cout if bias else 0)
        out = (n, cout, ho, wo)
        self.emit(name, f"conv{k}x{k}", group, params, cout * cin * k * k * ho * wo * n, self.elems(out) if bias else 0, out)

    def bn(self, name, group):
        self.emit(name, "batchnorm", group, 2 * self.shape[1], 0, 2 * self.elems())

    def act(self, name, group, kind="relu"):
        self.emit(name, kind, group, 0, 0, self.elems())

    def attention(self, prefix, group, kind: AttentionKind):
        n, c, h, w = self.shape
        full = self.elems()
        if kind.kind == "pfca":
            self.emit(f"{prefix}.pool", "avgpool", group, 0, 0, full)
            self.emit(f"{prefix}.stats", "pfca-stats", group, 0, 0, 6 * n * c)
            self.emit(f"{prefix}.gate", "sigmoid", group, 0, 0, n * c)
            self.emit(f"{prefix}.scale", "mul", group, 0, 0, full)
        elif kind.kind == "ca":
            hidden = c // kind.reduction
            if hidden < 1:
                raise ValueError(f"{prefix}: reduction {kind.reduction} too large for {c} channels")
            self.emit(f"{prefix}.pool", "avgpool", group, 0, 0, full)
            self.emit(f"{prefix}.fc1", "linear", group, c * hidden + hidden, n * c * hidden, 2 * n * hidden)
            self.emit(f"{prefix}.fc2", "linear", group, hidden * c + c, n * hidden * c, 2 * n * c)
            self.emit(f"{prefix}.scale", "mul", group, 0, 0, full)
        elif kind.kind == "pa":
            self.emit(f"{prefix}.conv", "conv1x1", group, c * c + c, n * c * c * h * w, full)
            self.emit(f"{prefix}.gate", "sigmoid", group, 0, 0, full)
            self.emit(f"{prefix}.scale", "mul", group, 0, 0, full)


def _resnet_rows(spec: ModelSpec, walker: _Walker) -> None:
    w = spec.width
    if spec.stem == "imagenet":
        walker.conv("stem.0", "stem", w, 7, 2, 3, bias=False)
        walker.bn("stem.1", "stem")
        walker.act("stem.2", "stem")
        n, c, h, ww = walker.shape
        out = (n, c, conv_output_size(h, 3, 2, 1), conv_output_size(ww, 3, 2, 1))
        walker.emit("stem.3", "maxpool", "stem", 0, 0, walker.elems(out) * 9, out)
    else:
        walker.conv("stem.0", "stem", w, 3, 1, 1, bias=False)
        walker.bn("stem.1", "stem")
        walker.act("stem.2", "stem")

    bottleneck = spec.block_kind == "bottleneck"
    cin = w
    for i, n_blocks in enumerate(spec.stages):
        cout = w * 2**i * (EXPANSION if bottleneck else 1)
        for j in range(n_blocks):
            stride = 2 if (j == 0 and i > 0) else 1
            p = f"layer{i + 1}.{j}"
            block_in = walker.shape
            if bottleneck:
                mid = cout // EXPANSION
                s1, s3 = (stride, 1) if spec.bottleneck_stride == "1x1" else (1, stride)
                walker.conv(f"{p}.conv1", "body", mid, 1, s1, 0, bias=False)
                walker.bn(f"{p}.bn1", "body")
                walker.act(f"{p}.relu1", "body")
                walker.conv(f"{p}.conv2", "body", mid, 3, s3, 1, bias=False)
                walker.bn(f"{p}.bn2", "body")
                walker.act(f"{p}.relu2", "body")
                walker.conv(f"{p}.conv3", "body", cout, 1, 1, 0, bias=False)
                walker.bn(f"{p}.bn3", "body")
            else:
                walker.conv(f"{p}.conv1", "body", cout, 3, stride, 1, bias=False)
                walker.bn(f"{p}.bn1", "body")
                walker.act(f"{p}.relu1", "body")
                walker.conv(f"{p}.conv2", "body", cout, 3, 1, 1, bias=False)
                walker.bn(f"{p}.bn2", "body")
            walker.attention(f"{p}.attn", "body", spec.attention)
            branch_out = walker.shape
            if stride != 1 or cin != cout:
                walker.shape = block_in
                walker.conv(f"{p}.shortcut.conv", "body", cout, 1, stride, 0, bias=False)
                walker.bn(f"{p}.shortcut.bn", "body")
            walker.shape = branch_out
            walker.act(f"{p}.add", "body", "add")
            walker.act(f"{p}.relu", "body")
            cin = cout

    n, c, h, ww = walker.shape
    walker.emit("pool", "avgpool", "head", 0, 0, n * c * h * ww, (n, c, 1, 1))
    k = spec.num_classes
    walker.emit("fc", "linear", "head", c * k + k, n * c * k, n * k, (n, k, 1, 1))


def _msrresnet_rows(spec: ModelSpec, walker: _Walker) -> None:
    nf = spec.width
    n, c_in, h0, w0 = walker.shape
    walker.conv("conv_first", "stem", nf, 3)
    walker.act("conv_first.lrelu", "stem", "leaky_relu")
    for b in range(spec.num_blocks):
        p = f"body.{b}"
        walker.conv(f"{p}.conv1", "body", nf, 3)
        walker.act(f"{p}.relu", "body")
        walker.conv(f"{p}.conv2", "body", nf, 3)
        walker.attention(f"{p}.attn", "body", spec.attention)
        walker.act(f"{p}.add", "body", "add")
    for u in (1, 2):
        walker.conv(f"upconv{u}", "head", nf * 4, 3)
        n, c, h, w = walker.shape
        walker.emit(f"upconv{u}.shuffle", "pixelshuffle", "head", shape=(n, c // 4, h * 2, w * 2))
        walker.act(f"upconv{u}.lrelu", "head", "leaky_relu")
    walker.conv("hr_conv", "head", nf, 3)
    walker.act("hr_conv.lrelu", "head", "leaky_relu")
    walker.conv("conv_last", "head", c_in, 3)
    # bilinear skip: 4 taps per output element plus the add
    walker.emit("skip.bilinear", "upsample", "head", 0, 0, 5 * walker.elems())


def analyze(model: ModelSpec | Module, input_shape, exclude=()) -> CostReport:
    """Build a per-layer CostReport for ``model`` on an input of ``input_shape``."""
    spec = _spec_of(model)
    shape = tuple(int(v) for v in input_shape)
    if len(shape) != 4 or min(shape) < 1:
        raise ShapeError(f"input shape must be N x C x H x W with positive dims, got {input_shape}")
    if shape[1] != spec.in_channels:
        raise ShapeError(f"model expects {spec.in_channels} input channels, got {shape[1]}")
    exclude = tuple(exclude)
    for g in exclude:
        if g not in GROUPS:
            raise ValueError(f"unknown layer group {g!r}; choose from {GROUPS}")
    walker = _Walker(shape)
    if spec.family == "resnet":
        _resnet_rows(spec, walker)
    else:
        _msrresnet_rows(spec, walker)
    return CostReport(spec.name, shape, walker.rows, exclude)


def _spec_of(model) -> ModelSpec:
    if isinstance(model, ModelSpec):
        return model
    spec = getattr(model, "spec", None)
    if not isinstance(spec, ModelSpec):
        raise TypeError("expected a ModelSpec or a network built from one")
    return spec


def count_params(model: ModelSpec | Module) -> int:
    """Trainable parameter count.

    A built network is counted by walking its ParamStore; a bare ModelSpec is
    counted by the analyzer's layer arithmetic.
    """
    if isinstance(model, Module):
        return model.param_store().count()
    return analyze(model, (1, model.in_channels, 64, 64)).params


def count_flops(model: ModelSpec | Module, input_shape, exclude=()) -> int:
    """Headline multiply-accumulate count (convolutions and linear layers)."""
    return analyze(model, input_shape, exclude).macs


def compare(models, input_shape, csv: bool = False, exclude=()) -> str:
    """Table of params / MACs for several models with deltas against the first."""
    reports = [analyze(m, input_shape, exclude) for m in models]
    if not reports:
        return ""
    base = reports[0]
    if csv:
        lines = ["name,params,macs,delta_params,delta_macs"]
        for r in reports:
            lines.append(f"{r.model},{r.params},{r.macs},{r.params - base.params},{r.macs - base.macs}")
        return "\n".join(lines) + "\n"
    sr = base.is_sr
    unit = "K" if sr else "M"
    lines = [
        f"input {'x'.join(map(str, base.input_shape))} ({base.convention()})",
        f"{'model':<20s} {'params (' + unit + ')':>12s} {'MACs (G)':>10s} {'d params':>10s} {'d MACs (G)':>11s}",
    ]
    for r in reports:
        div = 1e3 if sr else 1e6
        dp = (r.params - base.params) / div
        p = f"{r.params / div:.1f}" if sr else f"{r.params / div:.2f}"
        dps = f"{dp:+.1f}" if sr else f"{dp:+.2f}"
        lines.append(
            f"{r.model:<20s} {p:>12s} {r.macs / 1e9:>10.2f} {dps:>10s} {(r.macs - base.macs) / 1e9:>+11.2f}"
        )
    return "\n".join(lines) + "\n"
