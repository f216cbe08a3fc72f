"""Image-quality and classification metrics (PSNR, SSIM on luma, top-k)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _plane(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a single 2-D image plane, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image plane contains non-finite values")
    return a


def psnr(a, b, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical planes give +inf."""
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def _gauss1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    g = _gauss1d(size, sigma)
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, g1: np.ndarray) -> np.ndarray:
    k = len(g1)
    rows = sliding_window_view(img, k, axis=0) @ g1
    return sliding_window_view(rows, k, axis=1) @ g1


def ssim_components(a, b, peak: float = 255.0) -> tuple[np.ndarray, np.ndarray]:
    """Luminance and contrast-structure maps; their product is the SSIM map."""
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    g1 = _gauss1d()
    mu_a, mu_b = _filter_valid(a, g1), _filter_valid(b, g1)
    var_a = _filter_valid(a * a, g1) - mu_a**2
    var_b = _filter_valid(b * b, g1) - mu_b**2
    cov = _filter_valid(a * b, g1) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim_map(a, b, peak: float = 255.0) -> np.ndarray:
    lum, cs = ssim_components(a, b, peak)
    return lum * cs


def ssim(a, b, peak: float = 255.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1=0.01, K2=0.03)."""
    return float(ssim_map(a, b, peak).mean())


def rgb_to_y(image) -> np.ndarray:
    """BT.601 studio-swing luma of a 3 x H x W RGB image in [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"rgb_to_y needs 3 planes (3 x H x W), got shape {img.shape}")
    r, g, b = img
    return (65.481 * r + 128.553 * g + 24.966 * b) / 255.0 + 16.0


def crop_border(plane: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return plane
    return plane[..., border:-border, border:-border]


def sr_scores(pred_rgb01, hr_rgb01, border: int = 4, quantize: bool = True) -> tuple[float, float]:
    """(PSNR, SSIM) on the Y channel of two 3 x H x W images in [0, 1].

    With ``quantize`` both images are first rounded to 8-bit levels, as if
    written to PNG, which is the usual way SR outputs are scored.
    """
    def prep(img):
        img = np.clip(img, 0, 1) * 255.0
        return crop_border(rgb_to_y(np.rint(img) if quantize else img), border)

    ya, yb = prep(pred_rgb01), prep(hr_rgb01)
    return psnr(ya, yb), ssim(ya, yb)


def topk_accuracy(logits, labels, k: int = 1) -> float:
    """Fraction of rows whose label is among the k largest logits (ties: lower index wins)."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, classes = logits.shape
    if k > classes:
        raise ValueError(f"k={k} exceeds class count {classes}")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError("label out of range")
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(order == labels[:, None], axis=1)))
