"""Neural-network layer primitives on N x C x H x W tensors."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(xn: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Padded NHWC input -> (N*Ho*Wo, kh*kw*C) patch matrix."""
    n, _, _, c = xn.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xn.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xn[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    return cols.reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) via im2col."""
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be {ho}x{wo} for input {h}x{w}, kernel {kh}x{kw}")

    xn = x.data.transpose(0, 2, 3, 1)
    if padding:
        xn = np.pad(xn, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    pointwise = kh == kw == 1 and stride == 1
    cols = np.ascontiguousarray(xn).reshape(-1, cin) if pointwise else _im2col(xn, kh, kw, stride, ho, wo)
    # (Cout, kh*kw*Cin), matching the patch layout
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = None
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        gb = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = gm @ wmat
            if pointwise:
                gxn = gcols.reshape(xn.shape)
            else:
                gcols = gcols.reshape(n, ho, wo, kh, kw, cin)
                gxn = np.zeros(xn.shape, dtype=xn.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxn[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, i, j, :]
            if padding:
                gxn = gxn[:, padding : padding + h, padding : padding + w, :]
            gx = gxn.transpose(0, 3, 1, 2)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out), parents, backward, "conv2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per (sample, channel), returned as N x C x 1 x 1."""
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3), keepdims=True)
    scale = 1.0 / (h * w)

    def backward(g):
        return (np.broadcast_to(g * scale, x.shape).astype(x.dtype),)

    return make_result(data, (x,), backward, "global_avg_pool")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """out[n, c, h*r+i, w*r+j] = x[n, c*r*r + i*r + j, h, w]."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by {r}^2")
    co = c // (r * r)
    data = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def backward(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return make_result(np.ascontiguousarray(data), (x,), backward, "pixel_shuffle")


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse rearrangement of :func:`pixel_shuffle` on raw arrays."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray | None,
    running_var: np.ndarray | None,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics normalize the input and the running
    buffers (when given) are updated in place; the running variance uses the
    unbiased estimate. Eval mode requires running statistics.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm parameters must have shape ({c},)")
    axes = (0, 2, 3)
    shape = (1, c, 1, 1)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            m = x.size // c
            unbiased = var * (m / max(m - 1, 1))
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise RuntimeError("batch_norm in eval mode needs running statistics")
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            if training:
                m = x.size // c
                gx = (
                    inv_std.reshape(shape)
                    / m
                    * (
                        m * gxhat
                        - gxhat.sum(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                    )
                )
            else:
                gx = gxhat * inv_std.reshape(shape)
        return gx, gg, gb

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on N x Cin rows: x @ weight.T + bias."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "linear")


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, kernel, stride, padding), conv_output_size(w, kernel, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2d output would be {ho}x{wo}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        di, dj = np.divmod(arg, kernel)
        rows = np.arange(ho)[None, None, :, None] * stride + di
        cols = np.arange(wo)[None, None, None, :] * stride + dj
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(gxp, (nn_, cc, rows, cols), g)
        return (gxp[:, :, padding : padding + h, padding : padding + w],)

    return make_result(np.ascontiguousarray(data), (x,), backward, "max_pool2d")


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix for half-pixel-centred bilinear resizing (n_out x n_in)."""
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m


def upsample_bilinear(x: Tensor, scale: int) -> Tensor:
    n, c, h, w = x.shape
    ah = bilinear_matrix(h, h * scale).astype(x.dtype)
    aw = bilinear_matrix(w, w * scale).astype(x.dtype)
    data = np.einsum("oh,nchw,pw->ncop", ah, x.data, aw, optimize=True)

    def backward(g):
        return (np.einsum("oh,ncop,pw->nchw", ah, g, aw, optimize=True),)

    return make_result(np.ascontiguousarray(data), (x,), backward, "upsample_bilinear")
