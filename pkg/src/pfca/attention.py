"""Channel and pixel attention operators.

``pfca_forward`` computes per-channel gates in closed form from the mean and
population variance (across channels) of the pooled channel vector, so it owns
no parameters. ``ca_forward`` is squeeze-and-excitation with a two-layer
bottleneck perceptron and ``pa_forward`` is a 1x1-convolution pixel gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, Linear, Module
from .tensor import NonFiniteError, Tensor, _sigmoid, flatten, make_result, mul, relu, reshape, sigmoid

DEFAULT_LAMBDA = 1e-4


@dataclass(frozen=True)
class AttentionKind:
    kind: str = "none"  # none | pfca | ca | pa
    reduction: int = 16
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.kind not in ("none", "pfca", "ca", "pa"):
            raise ValueError(f"unknown attention kind {self.kind!r}")
        if self.reduction < 1:
            raise ValueError("reduction must be >= 1")
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")

    @classmethod
    def parse(cls, text: str, reduction: int = 16) -> AttentionKind:
        return cls(text.strip().lower(), reduction)

    def __str__(self) -> str:
        return f"ca(r={self.reduction})" if self.kind == "ca" else self.kind


NONE = AttentionKind("none")
PFCA_KIND = AttentionKind("pfca")
CA_KIND = AttentionKind("ca")
PA_KIND = AttentionKind("pa")


@dataclass
class ChannelStats:
    mu: np.ndarray  # (N,)
    sigma2: np.ndarray  # (N,)
    lam: float


def channel_stats(u: np.ndarray, lam: float = DEFAULT_LAMBDA) -> ChannelStats:
    """Per-sample mean and population variance of a pooled vector of shape (N, C)."""
    return ChannelStats(u.mean(axis=1), u.var(axis=1), lam)


def pfca_energy(u: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Pre-sigmoid gate V for pooled channels ``u`` of shape (N, C)."""
    st = channel_stats(u, lam)
    s = (st.sigma2 + lam)[:, None]
    return ((u - st.mu[:, None]) ** 2 + 2 * s) / (4 * s)


def pfca_weights(x: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """The N x C x 1 x 1 gates that :func:`pfca_forward` applies to ``x``."""
    u = x.mean(axis=(2, 3))
    return _sigmoid(pfca_energy(u, lam))[:, :, None, None]


def _pfca_backward(g, x, d, s, a):
    """Gradient of Y = x * sigmoid(V(pool(x))) w.r.t. x.

    g: upstream grad (N,C,H,W); d: U - mu (N,C); s: sigma2 + lambda (N,1);
    a: sigmoid(V) (N,C).
    """
    n, c, h, w = x.shape
    ga = (g * x).sum(axis=(2, 3))
    gv = ga * a * (1 - a)
    gvd = gv * d
    gu = gvd / (2 * s) - gvd.sum(axis=1, keepdims=True) / (2 * c * s) - d * (gv * d * d).sum(
        axis=1, keepdims=True
    ) / (2 * c * s * s)
    return g * a[:, :, None, None] + (gu / (h * w))[:, :, None, None]


def pfca_forward(x: Tensor, lam: float = DEFAULT_LAMBDA) -> Tensor:
    """Parameter-free channel attention: Y = X * sigmoid(V) with V from pooled stats."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError("pfca_forward: non-finite input")
    u = x.data.mean(axis=(2, 3))
    d = u - u.mean(axis=1, keepdims=True)
    s = (d * d).mean(axis=1, keepdims=True) + lam
    v = (d * d + 2 * s) / (4 * s)
    a = _sigmoid(v)
    out = x.data * a[:, :, None, None]
    xd = x.data
    return make_result(out, (x,), lambda g: (_pfca_backward(g, xd, d, s, a),), "pfca")


def ca_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    n, c = x.shape[:2]
    if w1.shape[1] != c or w2.shape[0] != c:
        raise ops.ShapeError(f"CA weights {w1.shape}/{w2.shape} do not match {c} channels")
    u = flatten(ops.global_avg_pool(x))
    s = sigmoid(ops.linear(relu(ops.linear(u, w1, b1)), w2, b2))
    return mul(x, reshape(s, (n, c, 1, 1)))


def pa_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if w.shape[:2] != (x.shape[1], x.shape[1]):
        raise ops.ShapeError(f"PA weight {w.shape} does not match {x.shape[1]} channels")
    return mul(x, sigmoid(ops.conv2d(x, w, b)))


class PFCA(Module):
    def __init__(self, lam: float = DEFAULT_LAMBDA):
        super().__init__()
        self.lam = lam

    def forward(self, x):
        return pfca_forward(x, self.lam)


class ChannelAttention(Module):
    """Squeeze-and-excitation: C -> C/r -> C with biases on both layers."""

    def __init__(self, channels: int, reduction: int = 16, rng=None):
        super().__init__()
        hidden = channels // reduction
        if hidden < 1:
            raise ValueError(f"reduction {reduction} leaves no hidden units for {channels} channels")
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng)

    def forward(self, x):
        return ca_forward(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


class PixelAttention(Module):
    def __init__(self, channels: int, rng=None):
        super().__init__()
        self.conv = Conv2d(channels, channels, 1, rng=rng)

    def forward(self, x):
        return pa_forward(x, self.conv.weight, self.conv.bias)


def attention_params(kind: AttentionKind, channels: int) -> int:
    """Parameter count of one attention instance, from the layer arithmetic."""
    if kind.kind == "ca":
        hidden = channels // kind.reduction
        return channels * hidden + hidden + hidden * channels + channels
    if kind.kind == "pa":
        return channels * channels + channels
    return 0


def make_attention(kind: AttentionKind, channels: int, rng=None) -> Module | None:
    if kind.kind == "pfca":
        return PFCA(kind.lam)
    if kind.kind == "ca":
        return ChannelAttention(channels, kind.reduction, rng=rng)
    if kind.kind == "pa":
        return PixelAttention(channels, rng=rng)
    return None
