"""Module containers, parameters, and the standard layers built on :mod:`pfca.ops`."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, Tensor, leaky_relu, relu


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


@dataclass
class StoreEntry:
    tensor: Tensor
    trainable: bool


class ParamStore:
    """Ordered map from hierarchical name to tensor, flagged trainable or frozen."""

    def __init__(self):
        self._entries: OrderedDict[str, StoreEntry] = OrderedDict()

    def add(self, name: str, tensor: Tensor, trainable: bool) -> None:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._entries[name] = StoreEntry(tensor, trainable)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def items(self):
        return ((k, e.tensor) for k, e in self._entries.items())

    def entries(self):
        return self._entries.items()

    def trainable(self):
        return [(k, e.tensor) for k, e in self._entries.items() if e.trainable]

    def count(self) -> int:
        """Total element count of trainable entries."""
        return sum(e.tensor.size for e in self._entries.values() if e.trainable)


class Module:
    """Base class; parameters, buffers and submodules register on assignment."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif value is None and name in self._params:
            del self._params[name]
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: Tensor) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- traversal ---------------------------------------------------------
    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = ""):
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod._params.items():
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def named_buffers(self, prefix: str = ""):
        for mod_name, mod in self.named_modules(prefix):
            for name, b in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), b

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def param_store(self) -> ParamStore:
        store = ParamStore()
        for mod_name, mod in self.named_modules():
            for name, p in mod._params.items():
                store.add(f"{mod_name}.{name}" if mod_name else name, p, True)
            for name, b in mod._buffers.items():
                store.add(f"{mod_name}.{name}" if mod_name else name, b, False)
        return store

    # -- state -----------------------------------------------------------
    def train(self, mode: bool = True):
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype):
        """Cast every parameter and buffer in place (used for 64-bit gradient checks)."""
        for _, m in self.named_modules():
            for t in list(m._params.values()) + list(m._buffers.values()):
                t.data = t.data.astype(dtype)
                t.grad = None
        return self


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def __iter__(self):
        return iter(self._children.values())

    def __len__(self):
        return len(self._children)

    def __getitem__(self, i):
        return list(self._children.values())[i]

    def forward(self, x):
        for layer in self._children.values():
            x = layer(x)
        return x


def kaiming_normal(shape, rng: np.random.Generator, gain: float = math.sqrt(2.0), dtype=DEFAULT_DTYPE) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * (gain / math.sqrt(fan_in))).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=None, bias=True, rng=None, init_scale=1.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = cin, cout
        self.kernel, self.stride = kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Parameter(kaiming_normal((cout, cin, kernel, kernel), rng) * init_scale)
        self.bias = Parameter(np.zeros(cout, DEFAULT_DTYPE)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, cin, cout, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(kaiming_normal((cout, cin), rng, gain=1.0))
        self.bias = Parameter(np.zeros(cout, DEFAULT_DTYPE)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = ops.BN_MOMENTUM, eps: float = ops.BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels, DEFAULT_DTYPE))
        self.bias = Parameter(np.zeros(channels, DEFAULT_DTYPE))
        self.register_buffer("running_mean", Tensor(np.zeros(channels, DEFAULT_DTYPE)))
        self.register_buffer("running_var", Tensor(np.ones(channels, DEFAULT_DTYPE)))
        self.register_buffer("num_batches_tracked", Tensor(np.zeros(1, DEFAULT_DTYPE)))

    def forward(self, x):
        if self.training:
            self.num_batches_tracked.data += 1
        elif self.num_batches_tracked.data[0] == 0:
            raise RuntimeError("BatchNorm2d evaluated before any running statistics were collected")
        return ops.batch_norm(
            x,
            self.weight,
            self.bias,
            self.running_mean.data,
            self.running_var.data,
            self.training,
            self.momentum,
            self.eps,
        )


class ReLU(Module):
    def forward(self, x):
        return relu(x)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.1):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        return leaky_relu(x, self.slope)


class Identity(Module):
    def forward(self, x):
        return x


class MaxPool2d(Module):
    def __init__(self, kernel=3, stride=2, padding=1):
        super().__init__()
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x):
        return ops.max_pool2d(x, self.kernel, self.stride, self.padding)
