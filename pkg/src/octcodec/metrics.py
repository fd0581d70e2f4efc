"""Quality metrics and Bjontegaard delta rate."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

PSNR_CAP = 100.0
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return psnr_from_mse(mse, max_val)


def psnr_from_mse(mse: float, max_val: float = 255.0) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val**2 / mse))


def msssim_db(m: float) -> float:
    """-10 log10(1 - m), capped at 100 dB."""
    if m >= 1.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(1.0 - m))


def _gauss_1d(size: int = WINDOW, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    return g / g.sum()


def _blur(x: Tensor) -> Tensor:
    """Separable 'valid' Gaussian filtering of a (B, 1, H, W) tensor."""
    g = _gauss_1d()
    x = T.conv2d(x, Tensor(g.reshape(1, 1, -1, 1)))
    return T.conv2d(x, Tensor(g.reshape(1, 1, 1, -1)))


def _avg_pool2(x: Tensor) -> Tensor:
    return T.conv2d(x, Tensor(np.full((1, 1, 2, 2), 0.25)), stride=2)


def _ssim_terms(x: Tensor, y: Tensor, data_range: float) -> tuple[Tensor, Tensor]:
    """Per-image mean SSIM and contrast-structure, shape (B,)."""
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_x, mu_y = _blur(x), _blur(y)
    mu_xx, mu_yy, mu_xy = T.mul(mu_x, mu_x), T.mul(mu_y, mu_y), T.mul(mu_x, mu_y)
    s_xx = T.sub(_blur(T.mul(x, x)), mu_xx)
    s_yy = T.sub(_blur(T.mul(y, y)), mu_yy)
    s_xy = T.sub(_blur(T.mul(x, y)), mu_xy)
    cs_map = T.div(T.add(T.mul(s_xy, 2.0), c2), T.add(T.add(s_xx, s_yy), c2))
    lum = T.div(T.add(T.mul(mu_xy, 2.0), c1), T.add(T.add(mu_xx, mu_yy), c1))
    ssim_map = T.mul(lum, cs_map)
    return T.mean(ssim_map, axis=(1, 2, 3)), T.mean(cs_map, axis=(1, 2, 3))


def num_scales(h: int, w: int, max_scales: int = len(MSSSIM_WEIGHTS)) -> int:
    """Largest scale count whose coarsest level still fits the 11x11 window."""
    n = 1
    while n < max_scales and min(h, w) // 2**n >= WINDOW:
        n += 1
    return n


def ms_ssim_tensor(a: Tensor, b: Tensor, data_range: float = 255.0, scales: int | None = None) -> Tensor:
    """Differentiable MS-SSIM of (N, C, H, W) batches, averaged over images and channels.

    Uses the standard five scales when the image is large enough; smaller
    inputs use fewer scales with the leading weights renormalized.
    """
    n, c, h, w = a.shape
    if b.shape != a.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(h, w) < WINDOW:
        raise ValueError(f"images smaller than the {WINDOW}x{WINDOW} window")
    levels = scales or num_scales(h, w)
    weights = np.asarray(MSSSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()
    x = T.reshape(a, (n * c, 1, h, w))
    y = T.reshape(b, (n * c, 1, h, w))
    total = None
    for i in range(levels):
        ssim, cs = _ssim_terms(x, y, data_range)
        term = ssim if i == levels - 1 else cs
        term = T.power(T.clamp(term, 1e-12, None), float(weights[i]))
        total = term if total is None else T.mul(total, term)
        if i < levels - 1:
            hh, ww = x.shape[2] // 2 * 2, x.shape[3] // 2 * 2
            x = _avg_pool2(T.crop(x, hh, ww))
            y = _avg_pool2(T.crop(y, hh, ww))
    return T.mean(total)


def ms_ssim(a: np.ndarray, b: np.ndarray, data_range: float = 255.0) -> float:
    """MS-SSIM of two images, HxWxC or HxW, in [0, data_range]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    ta = Tensor(a.transpose(2, 0, 1)[None])
    tb = Tensor(b.transpose(2, 0, 1)[None])
    with T.no_grad():
        return float(ms_ssim_tensor(ta, tb, data_range).data)


def bd_rate(anchor_rate, anchor_quality, test_rate, test_quality) -> float:
    """Bjontegaard delta rate (percent) of ``test`` against ``anchor``.

    Log-rate is fitted as a cubic polynomial of quality for each curve and
    the fits are integrated over the overlapping quality range. Negative
    values mean the test curve needs fewer bits.
    """
    ar, aq = np.asarray(anchor_rate, float), np.asarray(anchor_quality, float)
    tr, tq = np.asarray(test_rate, float), np.asarray(test_quality, float)
    for r, q in ((ar, aq), (tr, tq)):
        if r.shape != q.shape or r.ndim != 1:
            raise ValueError("rate and quality must be 1-D arrays of equal length")
        if len(r) < 2:
            raise ValueError("need at least two points per curve")
        if np.any(r <= 0):
            raise ValueError("rates must be positive")
    lo = max(aq.min(), tq.min())
    hi = min(aq.max(), tq.max())
    if hi <= lo:
        raise ValueError("quality ranges do not overlap")
    deg_a = min(3, len(ar) - 1)
    deg_t = min(3, len(tr) - 1)
    pa = np.polyint(np.polyfit(aq, np.log(ar), deg_a))
    pt = np.polyint(np.polyfit(tq, np.log(tr), deg_t))
    int_a = np.polyval(pa, hi) - np.polyval(pa, lo)
    int_t = np.polyval(pt, hi) - np.polyval(pt, lo)
    return float((math.exp((int_t - int_a) / (hi - lo)) - 1.0) * 100.0)
