"""Full-reference (PSNR, SSIM) and reference-free (ENL, Cx, EPD-ROA) metrics.

Reference-free metrics act on gray values shifted from [0, 255] to [1, 256]
(``shift=1``) so that no ratio divides by zero. Variances are population
(divide-by-n) variances, which makes ``cx**2 * enl == 1`` exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import Domain, Image

GRAY_SHIFT = 1.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
DATA_RANGE = 255.0

ArrayLike = Union[Image, np.ndarray]


def _values(x: ArrayLike) -> np.ndarray:
    return x.pixels if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


def _pair(a: ArrayLike, b: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    for img in (a, b):
        if isinstance(img, Image) and img.domain is not Domain.BYTE255:
            raise ValueError("full-reference metrics take Byte255 images")
    x, y = _values(a), _values(b)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch {x.shape} vs {y.shape}")
    return x, y


def psnr(y: ArrayLike, yhat: ArrayLike) -> float:
    """10 log10(I J 255^2 / ||yhat - y||^2); +inf when the images are equal."""
    a, b = _pair(y, yhat)
    err = float(np.sum((b - a) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(a.size * DATA_RANGE**2 / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(
    y: ArrayLike, yhat: ArrayLike, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA
) -> np.ndarray:
    """Per-window SSIM over all fully contained (valid) Gaussian windows."""
    a, b = _pair(y, yhat)
    if a.shape[0] < size or a.shape[1] < size:
        raise ValueError(f"image {a.shape} smaller than the {size}x{size} SSIM window")
    w = gaussian_window(size, sigma)
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2

    def filt(img):
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, (size, size)), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(y: ArrayLike, yhat: ArrayLike, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    a, b = _pair(y, yhat)
    if np.array_equal(a, b):
        return 1.0
    return float(ssim_map(a, b, size, sigma).mean())


def enl(region: ArrayLike, shift: float = GRAY_SHIFT) -> float:
    """mean^2 / variance; +inf on a constant region."""
    v = _values(region).astype(np.float64) + shift
    if v.size == 0:
        raise ValueError("empty region")
    var = float(np.mean((v - v.mean()) ** 2))
    if var == 0.0:
        return math.inf
    return float(v.mean()) ** 2 / var


def cx(region: ArrayLike, shift: float = GRAY_SHIFT) -> float:
    """Coefficient of variation std / mean."""
    v = _values(region).astype(np.float64) + shift
    if v.size == 0:
        raise ValueError("empty region")
    mean = float(v.mean())
    if not mean > 0:
        raise ValueError("coefficient of variation needs a positive mean")
    return math.sqrt(float(np.mean((v - mean) ** 2))) / mean


def adjacent_ratio_sum(img: np.ndarray, direction: str) -> float:
    if direction == "HD":
        return float(np.sum(np.abs(img[:, :-1] / img[:, 1:])))
    if direction == "VD":
        return float(np.sum(np.abs(img[:-1, :] / img[1:, :])))
    raise ValueError("direction must be 'HD' or 'VD'")


def epd_roa(
    noisy: ArrayLike, denoised: ArrayLike, direction: str = "HD", shift: float = GRAY_SHIFT
) -> float:
    """Sum of adjacent-pixel ratios of the denoised image over the same sum for
    the noisy image. HD pairs (r, c)/(r, c+1); VD pairs (r, c)/(r+1, c)."""
    a, b = _values(noisy), _values(denoised)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    return adjacent_ratio_sum(b + shift, direction) / adjacent_ratio_sum(a + shift, direction)


@dataclass
class MetricsReport:
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    enl: Optional[float] = None
    cx: Optional[float] = None
    epd_roa_hd: Optional[float] = None
    epd_roa_vd: Optional[float] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def full_reference(y: ArrayLike, yhat: ArrayLike) -> MetricsReport:
    return MetricsReport(psnr=psnr(y, yhat), ssim=ssim(y, yhat))


def reference_free(noisy: ArrayLike, denoised: ArrayLike) -> MetricsReport:
    return MetricsReport(
        enl=enl(denoised),
        cx=cx(denoised),
        epd_roa_hd=epd_roa(noisy, denoised, "HD"),
        epd_roa_vd=epd_roa(noisy, denoised, "VD"),
    )
