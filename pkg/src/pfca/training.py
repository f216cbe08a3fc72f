"""Losses, optimizers, learning-rate schedules, the training loop and checkpoints."""

from __future__ import annotations

import logging
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .nn import Module
from .tensor import NonFiniteError, Tensor, make_result, tabs, tmean

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax probability of the labels (max-subtracted)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} logits rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError("label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference."""
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if t.shape != pred.shape:
        raise ValueError(f"l1_loss shape mismatch {pred.shape} vs {t.shape}")
    return tmean(tabs(pred - t))


def one_hot(labels, k: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), k), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


def step_decay_lr(epoch: int, lr0: float, period: int, factor: float) -> float:
    return lr0 * factor ** (epoch // period)


def multistep_lr(epoch: int, lr0: float, milestones, factor: float) -> float:
    return lr0 * factor ** sum(epoch >= m for m in milestones)


def cosine_restarts_lr(it: int, eta_max: float, eta_min: float, period: int) -> float:
    t = it % period
    return eta_min + 0.5 * (eta_max - eta_min) * (1 + math.cos(math.pi * t / period))


# ---------------------------------------------------------------------------
# config and state
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    task: str = "classification"  # classification | super_resolution
    optimizer: str = "sgd"  # sgd | adam
    lr: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    schedule: str = "constant"  # constant | step | multistep | cosine
    step_period: int = 30
    factor: float = 0.1
    milestones: tuple[int, ...] = ()
    eta_min: float = 1e-7
    period: int = 250_000
    steps_per_epoch: int = 1
    loss: str = "cross_entropy"  # cross_entropy | l1
    batch_size: int = 32
    iterations: int = 1000
    eval_every: int = 100
    target_metric: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("classification", "super_resolution"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("constant", "step", "multistep", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.loss not in ("cross_entropy", "l1"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.schedule in ("step", "multistep") and not 0 < self.factor < 1:
            raise ValueError("decay factor must lie in (0, 1)")
        if self.schedule == "cosine" and self.eta_min > self.lr:
            raise ValueError("eta_min must not exceed the peak learning rate")
        for name in ("iterations", "batch_size", "eval_every", "step_period", "period", "steps_per_epoch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def lr_at(self, step: int) -> float:
        epoch = step // self.steps_per_epoch
        if self.schedule == "step":
            return step_decay_lr(epoch, self.lr, self.step_period, self.factor)
        if self.schedule == "multistep":
            return multistep_lr(epoch, self.lr, self.milestones, self.factor)
        if self.schedule == "cosine":
            return cosine_restarts_lr(step, self.lr, self.eta_min, self.period)
        return self.lr


@dataclass
class TrainState:
    step: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    lr: float = 0.0
    best_metric: float = -math.inf
    best_step: int = -1


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, momentum: float = 0.9,
             weight_decay: float = 0.0) -> None:
    """In place: g = grad + wd*param; v = momentum*v + g; param -= lr*v."""
    g = grad + weight_decay * param
    velocity *= momentum
    velocity += g
    param -= lr * velocity


def adam_step(param, grad, m, v, t: int, lr: float, beta1=0.9, beta2=0.99, weight_decay=0.0, eps=1e-8) -> None:
    g = grad + weight_decay * param
    m *= beta1
    m += (1 - beta1) * g
    v *= beta2
    v += (1 - beta2) * g * g
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class Optimizer:
    slot_names: tuple[str, ...] = ()

    def __init__(self, model: Module, cfg: TrainConfig, state: TrainState):
        self.params = model.param_store().trainable()
        self.cfg = cfg
        self.state = state
        for slot in self.slot_names:
            bucket = state.slots.setdefault(slot, {})
            for name, p in self.params:
                if name not in bucket:
                    bucket[name] = np.zeros_like(p.data)
                elif bucket[name].shape != p.shape:
                    raise ValueError(f"optimizer slot {slot}/{name} has shape {bucket[name].shape}, param {p.shape}")

    def step(self, lr: float) -> None:
        for name, p in self.params:
            if p.grad is None:
                raise RuntimeError(f"missing gradient for trainable parameter {name}")
            self._update(name, p, lr)

    def _update(self, name, p, lr):
        raise NotImplementedError


class SGD(Optimizer):
    slot_names = ("momentum",)

    def _update(self, name, p, lr):
        sgd_step(p.data, p.grad, self.state.slots["momentum"][name], lr, self.cfg.momentum, self.cfg.weight_decay)


class Adam(Optimizer):
    slot_names = ("adam_m", "adam_v")

    def _update(self, name, p, lr):
        c = self.cfg
        adam_step(p.data, p.grad, self.state.slots["adam_m"][name], self.state.slots["adam_v"][name],
                  self.state.step + 1, lr, c.beta1, c.beta2, c.weight_decay)


def make_optimizer(model: Module, cfg: TrainConfig, state: TrainState) -> Optimizer:
    return (SGD if cfg.optimizer == "sgd" else Adam)(model, cfg, state)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


def compute_loss(cfg: TrainConfig, out: Tensor, target) -> Tensor:
    if cfg.loss == "cross_entropy":
        return cross_entropy(out, target)
    if cfg.task == "classification":
        return l1_loss(out, one_hot(np.asarray(target), out.shape[1], out.dtype))
    return l1_loss(out, target)


LOG_HEADER = "step,lr,loss,metric"


def train_loop(
    model: Module,
    batch_fn: Callable[[int], tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig,
    eval_fn: Callable[[Module], float] | None = None,
    state: TrainState | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    max_steps: int | None = None,
) -> tuple[TrainState, list[tuple]]:
    """Run forward / loss / backward / update until ``cfg.iterations`` steps.

    ``batch_fn(step)`` must be a pure function of the step index so that runs
    and resumed runs see identical batches. Returns the final state and the
    metric log rows ``(step, lr, loss, metric)``; metric is None on steps
    without evaluation.
    """
    state = state or TrainState()
    opt = make_optimizer(model, cfg, state)
    rows: list[tuple] = []
    log_file = None
    if log_path is not None:
        new = not Path(log_path).exists()
        log_file = open(log_path, "a")
        if new:
            log_file.write(LOG_HEADER + "\n")
    end = cfg.iterations if max_steps is None else min(cfg.iterations, state.step + max_steps)
    try:
        model.train()
        while state.step < end:
            x, y = batch_fn(state.step)
            lr = cfg.lr_at(state.step)
            model.zero_grad()
            loss = compute_loss(cfg, model(Tensor(x)), y)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteError(f"non-finite loss {value} at step {state.step}")
            loss.backward()
            opt.step(lr)
            state.step += 1
            state.lr = lr

            metric = None
            done = state.step >= end
            if eval_fn is not None and (state.step % cfg.eval_every == 0 or done):
                model.eval()
                metric = float(eval_fn(model))
                model.train()
                if metric > state.best_metric:
                    state.best_metric, state.best_step = metric, state.step
                    if checkpoint_dir is not None:
                        save_checkpoint(Path(checkpoint_dir) / "ckpt_best", model, state)
                log.info("step %d lr %.3g loss %.5f metric %.4f", state.step, lr, value, metric)
            row = (state.step, lr, value, metric)
            rows.append(row)
            if log_file is not None:
                log_file.write(format_log_row(row) + "\n")
            if metric is not None and cfg.target_metric is not None and metric >= cfg.target_metric:
                break
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "ckpt_final", model, state)
    return state, rows


def format_log_row(row) -> str:
    step, lr, loss, metric = row
    return f"{step},{lr!r},{loss!r},{'' if metric is None else repr(metric)}"


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"PFCA"
CKPT_VERSION = 1
_MAX_EXACT_STEP = 2**24


class CheckpointError(ValueError):
    pass


def write_entries(path, entries: "OrderedDict[str, np.ndarray]") -> None:
    chunks = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_entries(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a PFCA checkpoint")
    if len(buf) < 10:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if off + 4 * size > len(buf):
                raise CheckpointError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float32)
            off += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out


def save_checkpoint(path, model: Module, state: TrainState) -> None:
    if state.step >= _MAX_EXACT_STEP:
        raise CheckpointError("step counter too large for exact float32 storage")
    entries: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, t in model.param_store().items():
        entries[f"param/{name}"] = t.data
    for slot, bucket in state.slots.items():
        for name, arr in bucket.items():
            entries[f"slot/{slot}/{name}"] = arr
    entries["state/step"] = np.array([state.step], np.float32)
    entries["state/best"] = np.array([state.best_metric, state.best_step], np.float32)
    write_entries(path, entries)


def load_checkpoint(path, model: Module) -> TrainState:
    """Restore parameters and buffers into ``model`` and return the saved TrainState."""
    entries = read_entries(path)
    store = model.param_store()
    for name, t in store.items():
        key = f"param/{name}"
        if key not in entries:
            raise CheckpointError(f"checkpoint has no tensor for {name}")
        if entries[key].shape != t.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint {entries[key].shape}, model {t.shape}")
    extra = [k[6:] for k in entries if k.startswith("param/") and k[6:] not in store]
    if extra:
        raise CheckpointError(f"checkpoint tensor {extra[0]} has no counterpart in the model")
    for name, t in store.items():
        t.data = entries[f"param/{name}"].astype(t.dtype)
        t.grad = None
    state = TrainState()
    for key, arr in entries.items():
        if key.startswith("slot/"):
            _, slot, name = key.split("/", 2)
            state.slots.setdefault(slot, {})[name] = arr.copy()
    state.step = int(entries["state/step"][0])
    best = entries["state/best"]
    state.best_metric, state.best_step = float(best[0]), int(best[1])
    return state
