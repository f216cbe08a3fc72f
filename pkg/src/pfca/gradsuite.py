"""The named finite-difference checks run by ``pfca gradcheck``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .attention import PFCA_KIND, ca_forward, pa_forward, pfca_forward
from .gradcheck import GradCheckReport, grad_check
from .models import BlockSpec, ModelSpec, build_model, make_block
from .nn import Module
from .tensor import Tensor, add, leaky_relu, mul, relu, sigmoid, tsum
from .training import cross_entropy, l1_loss

EPS = 1e-5
TOLERANCE = 1e-4
MODULE_COORDS = 10


def _t(rng, *shape, low=None):
    a = rng.standard_normal(shape)
    if low is not None:
        # keep values off kinks at zero
        a = np.sign(a) * (np.abs(a) + low)
    return Tensor(a.astype(np.float64), requires_grad=True)


def _weighted_sum(out: Tensor, rng_seed: int = 99) -> Tensor:
    r = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return tsum(out * Tensor(r))


def _check(name, fn, wrt, max_coords=None) -> GradCheckReport:
    return grad_check(lambda: _weighted_sum(fn()), wrt, EPS, TOLERANCE, max_coords=max_coords, name=name)


def _op_cases() -> dict[str, Callable[[], GradCheckReport]]:
    def conv():
        rng = np.random.default_rng(1)
        x, w, b = _t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)
        return _check("conv2d", lambda: ops.conv2d(x, w, b, stride=2, padding=1), [x, w, b])

    def conv1x1():
        rng = np.random.default_rng(2)
        x, w, b = _t(rng, 2, 3, 4, 4), _t(rng, 5, 3, 1, 1), _t(rng, 5)
        return _check("conv2d_1x1", lambda: ops.conv2d(x, w, b), [x, w, b])

    def pool():
        x = _t(np.random.default_rng(3), 2, 3, 4, 5)
        return _check("global_avg_pool", lambda: ops.global_avg_pool(x), [x])

    def sig():
        x = _t(np.random.default_rng(4), 2, 3, 3, 3)
        return _check("sigmoid", lambda: sigmoid(x), [x])

    def rl():
        x = _t(np.random.default_rng(5), 2, 3, 3, 3, low=0.05)
        return _check("relu", lambda: relu(x), [x])

    def lrl():
        x = _t(np.random.default_rng(6), 2, 3, 3, 3, low=0.05)
        return _check("leaky_relu", lambda: leaky_relu(x, 0.1), [x])

    def ad():
        rng = np.random.default_rng(7)
        x, y = _t(rng, 2, 3, 3, 3), _t(rng, 2, 3, 3, 3)
        return _check("add", lambda: add(x, y), [x, y])

    def ml():
        rng = np.random.default_rng(8)
        x, v = _t(rng, 2, 3, 3, 3), _t(rng, 2, 3, 1, 1)
        return _check("mul", lambda: mul(x, v), [x, v])

    def shuffle():
        x = _t(np.random.default_rng(9), 2, 8, 3, 3)
        return _check("pixel_shuffle", lambda: ops.pixel_shuffle(x, 2), [x])

    def bn():
        rng = np.random.default_rng(10)
        x, g, b = _t(rng, 3, 4, 3, 3), _t(rng, 4), _t(rng, 4)
        return _check("batch_norm", lambda: ops.batch_norm(x, g, b, None, None, training=True), [x, g, b])

    def lin():
        rng = np.random.default_rng(11)
        x, w, b = _t(rng, 3, 5), _t(rng, 4, 5), _t(rng, 4)
        return _check("linear", lambda: ops.linear(x, w, b), [x, w, b])

    def maxpool():
        x = _t(np.random.default_rng(12), 2, 2, 6, 6)
        return _check("max_pool2d", lambda: ops.max_pool2d(x, 3, 2, 1), [x])

    def upsample():
        x = _t(np.random.default_rng(13), 1, 2, 3, 4)
        return _check("upsample_bilinear", lambda: ops.upsample_bilinear(x, 4), [x])

    def ce():
        rng = np.random.default_rng(14)
        x = _t(rng, 4, 6)
        labels = np.array([0, 5, 2, 2])
        return grad_check(lambda: cross_entropy(x, labels), [x], EPS, TOLERANCE, name="cross_entropy")

    def l1():
        rng = np.random.default_rng(15)
        x = _t(rng, 2, 3, 3, 3)
        target = x.data + np.sign(rng.standard_normal(x.shape)) * (0.05 + np.abs(rng.standard_normal(x.shape)))
        return grad_check(lambda: l1_loss(x, target), [x], EPS, TOLERANCE, name="l1_loss")

    return {f.__name__: f for f in (conv, conv1x1, pool, sig, rl, lrl, ad, ml, shuffle, bn, lin, maxpool, upsample, ce, l1)}


def _attention_cases():
    def pfca():
        x = _t(np.random.default_rng(20), 2, 6, 4, 4)
        return _check("pfca", lambda: pfca_forward(x), [x])

    def ca():
        rng = np.random.default_rng(21)
        c, hidden = 8, 2
        x = _t(rng, 2, c, 3, 3)
        w1, b1, w2, b2 = _t(rng, hidden, c), _t(rng, hidden, low=0.1), _t(rng, c, hidden), _t(rng, c)
        return _check("ca", lambda: ca_forward(x, w1, b1, w2, b2), [x, w1, b1, w2, b2])

    def pa():
        rng = np.random.default_rng(22)
        x, w, b = _t(rng, 2, 4, 3, 3), _t(rng, 4, 4, 1, 1), _t(rng, 4)
        return _check("pa", lambda: pa_forward(x, w, b), [x, w, b])

    return {"pfca": pfca, "ca": ca, "pa": pa}


def check_module(name: str, module: Module, x_shape, seed: int = 0, max_coords: int = MODULE_COORDS) -> GradCheckReport:
    """Check input and parameter gradients of ``module`` in float64 train mode."""
    module.astype(np.float64).train()
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal(x_shape), requires_grad=True)
    wrt = [x] + module.parameters()
    return _check(name, lambda: module(x), wrt, max_coords=max_coords)


def _block_cases():
    rng_seed = 30
    attn = PFCA_KIND

    def basic():
        m = make_block(BlockSpec("basic", 4, 8, 2, attn), rng=np.random.default_rng(rng_seed))
        return check_module("basic_block", m, (3, 4, 6, 6))

    def bottleneck():
        m = make_block(BlockSpec("bottleneck", 8, 16, 2, attn), rng=np.random.default_rng(rng_seed))
        return check_module("bottleneck_block", m, (3, 8, 6, 6))

    def sr():
        m = make_block(BlockSpec("compact_sr", 6, 6, 1, attn), rng=np.random.default_rng(rng_seed), init_scale=1.0)
        return check_module("sr_block", m, (2, 6, 5, 5))

    return {"basic": basic, "bottleneck": bottleneck, "sr": sr}


def _model_cases():
    def resnet():
        spec = ModelSpec(family="resnet", depth=18, num_classes=5, stem="cifar", attention=PFCA_KIND, width=4)
        return check_module("resnet18_toy", build_model(spec, seed=1), (3, 3, 16, 16))

    def msrresnet():
        spec = ModelSpec(family="msrresnet", attention=PFCA_KIND, num_blocks=2, width=8)
        return check_module("msrresnet_toy", build_model(spec, seed=1), (2, 3, 4, 4))

    return {"resnet": resnet, "msrresnet": msrresnet}


SUITES = {
    "ops": _op_cases,
    "attention": _attention_cases,
    "blocks": _block_cases,
    "models": _model_cases,
}


def run_suite(which: str = "all") -> list[GradCheckReport]:
    if which == "all":
        names = list(SUITES)
    elif which in SUITES:
        names = [which]
    else:
        raise ValueError(f"unknown gradcheck module {which!r}; choose all or one of {', '.join(SUITES)}")
    reports = []
    for n in names:
        for case in SUITES[n]().values():
            reports.append(case())
    return reports
