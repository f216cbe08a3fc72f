"""Tensor storage and reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a node (parents plus a backward closure) so that
:meth:`Tensor.backward` can walk the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_node_ids = itertools.count(1)


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward pass produces NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = ""

    # -- basic accessors -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def astype(self, dtype) -> Tensor:
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff --------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise RuntimeError("loss is not on the differentiation tape (no input requires grad)")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return _add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return _add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return _mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        return NotImplemented

    def sum(self, axis=None, keepdims=False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> Tensor:
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], Iterable[np.ndarray | None]],
    op: str,
) -> Tensor:
    """Wrap ``data`` as an op output, recording a node when gradients are needed.

    ``backward`` receives the output gradient and returns one gradient (or
    None) per parent, in order.
    """
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.tape_id = next(_node_ids)
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def _add(x: Tensor, y: Tensor) -> Tensor:
    try:
        data = x.data + y.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {x.shape} and {y.shape}") from exc
    xs, ys = x.shape, y.shape
    return make_result(data, (x, y), lambda g: (unbroadcast(g, xs), unbroadcast(g, ys)), "add")


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of two identically shaped tensors."""
    if x.shape != y.shape:
        raise ShapeError(f"add needs identical shapes, got {x.shape} and {y.shape}")
    return _add(x, y)


def _mul(x: Tensor, y: Tensor) -> Tensor:
    try:
        data = x.data * y.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {x.shape} and {y.shape}") from exc
    xd, yd = x.data, y.data

    def backward(g):
        gx = unbroadcast(g * yd, xd.shape) if x.requires_grad else None
        gy = unbroadcast(g * xd, yd.shape) if y.requires_grad else None
        return gx, gy

    return make_result(data, (x, y), backward, "mul")


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise product; ``y`` may be a per-channel vector N x C x 1 x 1."""
    if y.shape != x.shape:
        ok = (
            x.ndim == 4
            and y.ndim == 4
            and y.shape[2:] == (1, 1)
            and y.shape[1] == x.shape[1]
            and y.shape[0] in (1, x.shape[0])
        )
        if not ok:
            raise ShapeError(f"mul broadcast rule violated: {x.shape} * {y.shape}")
    return _mul(x, y)


def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape
    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(data, (x,), backward, "sum")


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    s = tsum(x, axis=axis, keepdims=keepdims)
    count = x.size // max(s.size, 1)
    return s * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return make_result(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(data, tuple(tensors), backward, "concat")
