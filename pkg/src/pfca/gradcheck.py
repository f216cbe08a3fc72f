"""Central finite-difference checking of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

# denominators below this are treated as this; keeps near-zero gradients from
# turning roundoff into huge relative errors
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<24s} max rel err {self.max_rel_error:.3e} ({self.n_checked} coords)"


def grad_check(
    f: Callable[[], Tensor],
    wrt: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    name: str = "f",
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` takes no arguments and reads the tensors in ``wrt``, which are
    perturbed in place. Every tensor must hold float64 data. With
    ``max_coords`` set, only a seeded random subset of coordinates per tensor
    is perturbed.
    """
    tensors = [wrt] if isinstance(wrt, Tensor) else list(wrt)
    for t in tensors:
        if t.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 tensors, got {t.dtype}")
        t.requires_grad = True
        t.grad = None

    loss = f()
    if loss.size != 1:
        raise ValueError("grad_check: f must return a scalar")
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar(f())
            flat[i] = orig - eps
            fm = _scalar(f())
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = ga.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), REL_FLOOR)
            worst = max(worst, err)
            count += 1
    return GradCheckReport(name, worst, count, tolerance)


def _scalar(t: Tensor) -> float:
    v = float(t.data.reshape(-1)[0])
    if not np.isfinite(v):
        raise FloatingPointError("grad_check: non-finite function value")
    return v
