"""Image I/O, bicubic degradation, patch sampling, CIFAR-100 and synthetic datasets.

Images are float32 arrays of shape (3, H, W) in [0, 1]. Quantization to 8 bits
happens only when reading or writing PNG files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

SCALE = 4
CIFAR_RECORD = 2 + 3 * 32 * 32
CIFAR_COUNTS = {"train": 50_000, "test": 10_000}
CIFAR100_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR100_STD = (0.2673, 0.2564, 0.2762)


class ImageFormatError(ValueError):
    pass


@dataclass
class PairedSample:
    hr: np.ndarray
    lr: np.ndarray


@dataclass
class LabeledSample:
    image: np.ndarray
    label: int
    coarse: int | None = None


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def load_png(path) -> np.ndarray:
    """Read an 8-bit RGB or grayscale PNG; grayscale is replicated to 3 planes."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode not in ("RGB", "L"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {mode!r} (need 8-bit RGB or grayscale)")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: malformed image ({exc})") from exc
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return (arr.astype(np.float32) / 255.0).astype(np.float32)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def quantize8(image: np.ndarray) -> np.ndarray:
    """Round to the nearest 8-bit level, keeping float32 in [0, 1]."""
    return (to_uint8(image) / np.float32(255)).astype(np.float32)


def save_png(path, image: np.ndarray) -> None:
    from PIL import Image

    arr = to_uint8(image)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 3:
        Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0))).save(path)
    else:
        Image.fromarray(arr).save(path)


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------

def cubic(x, a: float = -0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=64)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out x n_in) bicubic resampling matrix.

    On downscale the kernel is stretched by 1/scale (antialiasing). Taps past
    the edge are clamped to the border sample and rows are normalized to sum
    to one.
    """
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    width = 4.0 / stretch
    u = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2).astype(int)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = stretch * cubic(stretch * (u[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(m, (rows, np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    m.setflags(write=False)
    return m


def bicubic_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a (C, H, W) or (H, W) array with the separable bicubic kernel (a = -0.5)."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    img = np.asarray(image)
    h, w = img.shape[-2:]
    mh, mw = resize_matrix(h, out_h), resize_matrix(w, out_w)
    out = np.einsum("oh,...hw,pw->...op", mh, img.astype(np.float64), mw, optimize=True)
    return out.astype(img.dtype if img.dtype.kind == "f" else np.float64)


def degrade(hr: np.ndarray, scale: int = SCALE) -> np.ndarray:
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        raise ValueError(f"HR size {h}x{w} not divisible by {scale}")
    return bicubic_resize(hr, h // scale, w // scale)


def bicubic_upscale(lr: np.ndarray, scale: int = SCALE) -> np.ndarray:
    h, w = lr.shape[-2:]
    return bicubic_resize(lr, h * scale, w * scale)


def make_pair(hr: np.ndarray, scale: int = SCALE) -> PairedSample:
    return PairedSample(hr, degrade(hr, scale))


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

def sample_patch(pair: PairedSample, hr_patch: int, rng: np.random.Generator, augment: bool = True,
                 scale: int = SCALE) -> PairedSample:
    """Aligned random HR/LR crop, optionally flipped and rotated by 90 degrees."""
    if hr_patch % scale:
        raise ValueError(f"HR patch {hr_patch} not divisible by {scale}")
    lp = hr_patch // scale
    lh, lw = pair.lr.shape[-2:]
    if lp > lh or lp > lw:
        raise ValueError(f"patch {hr_patch} larger than image {pair.hr.shape[-2:]}")
    y = int(rng.integers(0, lh - lp + 1))
    x = int(rng.integers(0, lw - lp + 1))
    lr = pair.lr[..., y : y + lp, x : x + lp]
    hr = pair.hr[..., y * scale : (y + lp) * scale, x * scale : (x + lp) * scale]
    if augment:
        if rng.random() < 0.5:
            lr, hr = lr[..., ::-1], hr[..., ::-1]
        if rng.random() < 0.5:
            lr, hr = np.rot90(lr, axes=(-2, -1)), np.rot90(hr, axes=(-2, -1))
    return PairedSample(np.ascontiguousarray(hr), np.ascontiguousarray(lr))


def paired_folder(hr_dir, lr_dir=None, scale: int = SCALE) -> list[tuple[str, PairedSample]]:
    """Pair HR and LR PNGs by identical filename; LR is synthesized when ``lr_dir`` is None."""
    hr_dir = Path(hr_dir)
    if not hr_dir.is_dir():
        raise FileNotFoundError(f"HR directory {hr_dir} not found")
    names = sorted(p.name for p in hr_dir.glob("*.png"))
    if not names:
        raise FileNotFoundError(f"no PNG files in {hr_dir}")
    out = []
    for name in names:
        hr = load_png(hr_dir / name)
        h, w = hr.shape[-2:]
        hr = hr[:, : h - h % scale, : w - w % scale]
        if lr_dir is None:
            lr = quantize8(degrade(hr, scale))
        else:
            lr_path = Path(lr_dir) / name
            if not lr_path.exists():
                raise FileNotFoundError(f"no LR image paired with {name} in {lr_dir}")
            lr = load_png(lr_path)
            if lr.shape[-2:] != (hr.shape[-2] // scale, hr.shape[-1] // scale):
                raise ValueError(f"{name}: LR size {lr.shape[-2:]} does not match HR {hr.shape[-2:]} / {scale}")
        out.append((name, PairedSample(hr, lr)))
    return out


# ---------------------------------------------------------------------------
# CIFAR-100
# ---------------------------------------------------------------------------

@dataclass
class CifarSplit:
    images: np.ndarray  # (N, 3, 32, 32) uint8
    fine: np.ndarray
    coarse: np.ndarray

    def __len__(self):
        return len(self.fine)

    def __iter__(self):
        for i in range(len(self)):
            yield LabeledSample(self.images[i].astype(np.float32) / 255.0, int(self.fine[i]), int(self.coarse[i]))


def parse_cifar100(buf: bytes | np.ndarray, expected: int | None = None) -> CifarSplit:
    raw = np.frombuffer(buf, dtype=np.uint8) if isinstance(buf, (bytes, bytearray)) else buf
    if raw.size % CIFAR_RECORD:
        raise ValueError(f"truncated CIFAR-100 record: {raw.size} bytes is not a multiple of {CIFAR_RECORD}")
    n = raw.size // CIFAR_RECORD
    if expected is not None and n != expected:
        raise ValueError(f"wrong CIFAR-100 file size: {n} records, expected {expected}")
    rec = raw.reshape(n, CIFAR_RECORD)
    coarse, fine = rec[:, 0], rec[:, 1]
    if np.any(fine >= 100) or np.any(coarse >= 20):
        raise ValueError("CIFAR-100 label byte out of range")
    return CifarSplit(rec[:, 2:].reshape(n, 3, 32, 32), fine, coarse)


def load_cifar100(directory, strict: bool = True) -> tuple[CifarSplit, CifarSplit]:
    """Read ``train.bin`` / ``test.bin`` from the CIFAR-100 binary distribution."""
    d = Path(directory)
    splits = []
    for split in ("train", "test"):
        path = d / f"{split}.bin"
        if not path.exists():
            raise FileNotFoundError(f"missing CIFAR-100 file {path}")
        raw = np.memmap(path, dtype=np.uint8, mode="r")
        splits.append(parse_cifar100(raw, CIFAR_COUNTS[split] if strict else None))
    return splits[0], splits[1]


def normalize_batch(images_uint8: np.ndarray, mean=CIFAR100_MEAN, std=CIFAR100_STD) -> np.ndarray:
    x = images_uint8.astype(np.float32) / 255.0
    m = np.asarray(mean, np.float32).reshape(1, 3, 1, 1)
    s = np.asarray(std, np.float32).reshape(1, 3, 1, 1)
    return (x - m) / s


# ---------------------------------------------------------------------------
# synthetic desk-scale data
# ---------------------------------------------------------------------------

_SHAPES = ("square", "disc", "hbars", "vbars", "cross", "ring", "diag", "dots")
_PALETTE = np.array(
    [[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.25, 0.35, 0.95], [0.95, 0.85, 0.2]], dtype=np.float32
)


def _shape_mask(kind: str, size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    dy, dx = yy - cy, xx - cx
    inside = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "square":
        return inside
    if kind == "disc":
        return dy**2 + dx**2 <= r**2
    if kind == "hbars":
        return inside & ((yy.astype(int) // 2) % 2 == 0)
    if kind == "vbars":
        return inside & ((xx.astype(int) // 2) % 2 == 0)
    if kind == "cross":
        return inside & ((np.abs(dy) <= r / 3) | (np.abs(dx) <= r / 3))
    if kind == "ring":
        d2 = dy**2 + dx**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if kind == "diag":
        return inside & (np.abs(dy - dx) <= r / 3)
    return inside & ((yy.astype(int) % 3 == 0) & (xx.astype(int) % 3 == 0))


def synth_classification(n: int, classes: int = 10, size: int = 16, seed: int = 0) -> list[LabeledSample]:
    """Class-conditional colored patterns: class k draws shape k mod 8 in color k div 8."""
    if classes > len(_SHAPES) * len(_PALETTE):
        raise ValueError(f"at most {len(_SHAPES) * len(_PALETTE)} synthetic classes")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = i % classes
        kind = _SHAPES[label % len(_SHAPES)]
        color = _PALETTE[label // len(_SHAPES)]
        r = size * rng.uniform(0.28, 0.38)
        cy, cx = (size - 1) / 2 + rng.uniform(-1.5, 1.5, size=2)
        mask = _shape_mask(kind, size, cy, cx, r)
        bg = rng.uniform(0.0, 0.25)
        img = np.full((3, size, size), bg, dtype=np.float32)
        img[:, mask] = color[:, None]
        img += rng.normal(0, 0.03, img.shape).astype(np.float32)
        out.append(LabeledSample(np.clip(img, 0, 1).astype(np.float32), label))
    return out


def _lowpass_field(rng, size: int, cutoff: float) -> np.ndarray:
    noise = rng.standard_normal((size, size))
    f = np.fft.fftfreq(size)
    radius = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)
    field = np.real(np.fft.ifft2(np.fft.fft2(noise) * np.exp(-((radius / cutoff) ** 2))))
    field -= field.min()
    return field / max(field.max(), 1e-12)


def _texture(rng, size: int) -> np.ndarray:
    kind = rng.integers(0, 4)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    if kind == 0:
        theta = rng.uniform(0, np.pi)
        t = (np.cos(theta) * xx + np.sin(theta) * yy) / size
        t = (t - t.min()) / max(np.ptp(t), 1e-12)
    elif kind == 1:
        cell = int(rng.integers(3, 9))
        oy, ox = rng.integers(0, cell, 2)
        t = (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)
    elif kind == 2:
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(5, 12)
        t = (np.floor((np.cos(theta) * xx + np.sin(theta) * yy) / period) % 2).astype(np.float64)
    else:
        t = _lowpass_field(rng, size, rng.uniform(0.04, 0.12))
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    return img


def synth_sr(n: int, hr_size: int = 64, seed: int = 0) -> list[PairedSample]:
    """Procedural HR textures (gradients, checkerboards, stripes, low-pass fields) with bicubic LR."""
    if hr_size % SCALE:
        raise ValueError(f"hr_size must be divisible by {SCALE}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        hr = _texture(rng, hr_size)
        if rng.random() < 0.5:
            # overlay a second pattern on a random half-plane
            other = _texture(rng, hr_size)
            theta = rng.uniform(0, 2 * np.pi)
            yy, xx = np.mgrid[0:hr_size, 0:hr_size] - hr_size / 2
            mask = (np.cos(theta) * xx + np.sin(theta) * yy) > rng.uniform(-hr_size / 4, hr_size / 4)
            hr = np.where(mask[None], other, hr)
        # stored at 8 bits, exactly as a PNG round trip would leave them
        hr = quantize8(hr)
        out.append(PairedSample(hr, quantize8(degrade(hr))))
    return out
