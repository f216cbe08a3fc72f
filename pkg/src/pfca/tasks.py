"""Wiring from a RunConfig to datasets, batch functions and evaluators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import data as D
from .config import RunConfig
from .metrics import sr_scores, topk_accuracy
from .nn import Module
from .tensor import Tensor, no_grad


@dataclass
class Task:
    batch_fn: Callable[[int], tuple[np.ndarray, np.ndarray]]
    eval_fn: Callable[[Module], float]
    metric_name: str
    describe: str


def _predict(model: Module, x: np.ndarray, chunk: int = 64) -> np.ndarray:
    outs = []
    with no_grad():
        for i in range(0, len(x), chunk):
            outs.append(model(Tensor(x[i : i + chunk])).data)
    return np.concatenate(outs)


def classification_task(cfg: RunConfig) -> Task:
    d, t = cfg.data, cfg.train
    classes = cfg.model.num_classes
    if d.source == "synthetic":
        samples = D.synth_classification(d.samples, classes, d.image_size, seed=t.seed)
        images = np.stack([s.image for s in samples])
        labels = np.array([s.label for s in samples])
        eval_images, eval_labels = images, labels
        augment = False
    elif d.source == "cifar100":
        train, test = D.load_cifar100(d.root)
        images, labels = train.images, train.fine.astype(np.int64)
        eval_images, eval_labels = test.images, test.fine.astype(np.int64)
        augment = d.augment
    elif d.source == "imagenet":
        raise FileNotFoundError("ImageNet ingestion is not provided; this config only records the schedule")
    else:
        raise ValueError("classification supports synthetic or cifar100 data")

    def prep(batch_images):
        if batch_images.dtype == np.uint8:
            return D.normalize_batch(batch_images)
        return batch_images

    bs = min(t.batch_size, len(labels))

    def batch_fn(step: int):
        rng = np.random.default_rng([t.seed, step])
        if bs == len(labels):
            idx = np.arange(len(labels))
        else:
            idx = np.sort(rng.choice(len(labels), bs, replace=False))
        x = prep(np.asarray(images[idx]))
        if augment:
            x = _flip_crop(x, rng)
        return x, labels[idx]

    def eval_fn(model: Module) -> float:
        logits = _predict(model, prep(np.asarray(eval_images)))
        return topk_accuracy(logits, eval_labels, 1)

    split = "train" if d.source == "synthetic" else "test"
    return Task(batch_fn, eval_fn, f"top1_{split}", f"{len(labels)} {d.source} samples, {classes} classes")


def _flip_crop(x: np.ndarray, rng) -> np.ndarray:
    n, _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (4, 4), (4, 4)), mode="reflect")
    out = np.empty_like(x)
    for i in range(n):
        y0, x0 = rng.integers(0, 9, 2)
        img = padded[i, :, y0 : y0 + h, x0 : x0 + w]
        out[i] = img[:, :, ::-1] if rng.random() < 0.5 else img
    return out


def sr_pairs(cfg: RunConfig, split: str) -> list[tuple[str, D.PairedSample]]:
    d, t = cfg.data, cfg.train
    if d.source == "synthetic":
        n, seed = (d.samples, t.seed) if split == "train" else (d.eval_samples, t.seed + 1000)
        return [(f"synth_{i:04d}", p) for i, p in enumerate(D.synth_sr(n, d.hr_size, seed=seed))]
    if d.source == "folder":
        hr, lr = (d.hr, d.lr) if split == "train" else (d.eval_hr or d.hr, d.eval_lr or None)
        return D.paired_folder(hr, lr or None)
    raise ValueError("super-resolution supports synthetic or folder data")


def evaluate_sr(predict: Callable[[D.PairedSample], np.ndarray], pairs, border: int = 4):
    """Per-image Y-channel (psnr, ssim, bicubic psnr, bicubic ssim) rows plus their means."""
    rows = []
    for name, p in pairs:
        pred = predict(p)
        base = D.bicubic_upscale(p.lr)
        rows.append((name, *sr_scores(pred, p.hr, border), *sr_scores(base, p.hr, border)))
    means = tuple(float(np.mean([r[i] for r in rows])) for i in range(1, 5))
    return rows, means


def model_predictor(model: Module) -> Callable[[D.PairedSample], np.ndarray]:
    def predict(p: D.PairedSample) -> np.ndarray:
        return _predict(model, p.lr[None].astype(np.float32))[0]

    return predict


def sr_task(cfg: RunConfig) -> Task:
    d, t = cfg.data, cfg.train
    train = [p for _, p in sr_pairs(cfg, "train")]
    held_out = sr_pairs(cfg, "eval")

    def batch_fn(step: int):
        rng = np.random.default_rng([t.seed, step])
        idx = rng.integers(0, len(train), t.batch_size)
        patches = [D.sample_patch(train[i], d.patch, rng, augment=d.augment) for i in idx]
        return np.stack([q.lr for q in patches]).astype(np.float32), np.stack([q.hr for q in patches]).astype(np.float32)

    lr_stack = np.stack([p.lr for _, p in held_out]).astype(np.float32) if _same_size(held_out) else None

    def eval_fn(model: Module) -> float:
        if lr_stack is not None:
            preds = _predict(model, lr_stack, chunk=8)
            return float(np.mean([sr_scores(o, p.hr, d.border)[0] for o, (_, p) in zip(preds, held_out)]))
        _, means = evaluate_sr(model_predictor(model), held_out, d.border)
        return means[0]

    return Task(batch_fn, eval_fn, "psnr_y", f"{len(train)} training / {len(held_out)} held-out {d.source} images")


def _same_size(pairs) -> bool:
    return len({p.lr.shape for _, p in pairs}) == 1


def make_task(cfg: RunConfig) -> Task:
    return classification_task(cfg) if cfg.train.task == "classification" else sr_task(cfg)
