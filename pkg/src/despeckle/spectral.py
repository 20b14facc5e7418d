"""Implicit heat-equation steps solved exactly in the Fourier domain.

All fields live on a periodic unit grid. The implicit step solves
``(I - tau * Lap) u = z`` where ``Lap`` is the periodic five-point Laplacian;
diagonalized by the DFT it becomes a pointwise division by
``1 - 2 tau (cos z_i + cos z_j - 2)`` with ``z_i = 2 pi i / N1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

CFL_LIMIT = 0.25
IMAG_TOLERANCE = 1e-9


class SpectralResidueError(RuntimeError):
    """The inverse transform of a real field under a real even filter came back
    with an imaginary part above IMAG_TOLERANCE (relative to the field size
    once values exceed 1)."""


class CFLViolation(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionConfig:
    tau: float = 0.1
    depth_K: int = 5
    boundary: str = "periodic"

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")
        if self.depth_K < 1:
            raise ValueError("depth_K must be >= 1")
        if self.boundary != "periodic":
            raise ValueError("only periodic boundaries are supported")


def dft2(field: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes (any sizes)."""
    field = np.asarray(field)
    if field.size == 0:
        raise ValueError("cannot transform an empty array")
    return np.fft.fft2(field, axes=(-2, -1))


def idft2(spectrum: np.ndarray) -> np.ndarray:
    spectrum = np.asarray(spectrum)
    if spectrum.size == 0:
        raise ValueError("cannot transform an empty array")
    return np.fft.ifft2(spectrum, axes=(-2, -1))


def angular_frequencies(n: int) -> np.ndarray:
    """z_k = 2 pi k / n for k = 0..n-1 (unwrapped, as the multiplier uses them)."""
    return 2.0 * np.pi * np.arange(n) / n


def wrapped_frequencies(n: int) -> np.ndarray:
    """|z_k| folded into [0, pi]."""
    k = np.arange(n)
    return 2.0 * np.pi * np.minimum(k, n - k) / n


def laplacian_symbol(shape: tuple[int, int]) -> np.ndarray:
    """Eigenvalues of the negated periodic five-point Laplacian, >= 0."""
    zi = angular_frequencies(shape[0])[:, None]
    zj = angular_frequencies(shape[1])[None, :]
    return -2.0 * (np.cos(zi) + np.cos(zj) - 2.0)


@lru_cache(maxsize=64)
def _multiplier_cached(shape: tuple[int, int], tau: float) -> np.ndarray:
    m = 1.0 / (tau * laplacian_symbol(shape) + 1.0)
    m.setflags(write=False)
    return m


def spectral_multiplier(shape, tau: float) -> np.ndarray:
    """Per-mode gain of one implicit step; m[0, 0] == 1 and 0 < m <= 1."""
    if not tau >= 0:
        raise ValueError("tau must be >= 0")
    return _multiplier_cached((int(shape[0]), int(shape[1])), float(tau))


def apply_multiplier(z: np.ndarray, mult: np.ndarray) -> np.ndarray:
    out = idft2(dft2(z) * mult)
    residue = np.max(np.abs(out.imag)) if out.size else 0.0
    scale = max(1.0, float(np.max(np.abs(out.real)))) if out.size else 1.0
    if residue >= IMAG_TOLERANCE * scale:
        raise SpectralResidueError(f"imaginary residue {residue:.3e} after inverse DFT")
    return np.ascontiguousarray(out.real)


def implicit_heat_step(z: np.ndarray, tau: float) -> np.ndarray:
    """Solve (I - tau Lap_per) u = z over the last two axes."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("implicit_heat_step input must be finite")
    if tau == 0:
        return z.copy()
    return apply_multiplier(z, spectral_multiplier(z.shape[-2:], tau))


def periodic_laplacian(u: np.ndarray) -> np.ndarray:
    return (
        np.roll(u, 1, axis=-2)
        + np.roll(u, -1, axis=-2)
        + np.roll(u, 1, axis=-1)
        + np.roll(u, -1, axis=-1)
        - 4.0 * u
    )


def explicit_heat_step(u: np.ndarray, tau: float, strict: bool = True) -> np.ndarray:
    """Forward Euler step; stable only for tau <= 1/4 on the unit grid."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau > CFL_LIMIT:
        msg = f"tau={tau} exceeds the explicit-scheme CFL bound {CFL_LIMIT}"
        if strict:
            raise CFLViolation(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    u = np.asarray(u, dtype=np.float64)
    return u + tau * periodic_laplacian(u)


def heat_kernel(shape, t: float) -> np.ndarray:
    """Sampled 2D fundamental solution (4 pi t)^-1 exp(-|x|^2 / 4t), periodized
    over the neighbouring images and renormalized to unit sum. Index (0, 0)
    holds the kernel centre."""
    if not t > 0:
        raise ValueError("heat kernel time must be positive")
    n1, n2 = int(shape[0]), int(shape[1])
    d1 = np.arange(n1)[:, None].astype(float)
    d2 = np.arange(n2)[None, :].astype(float)
    k = np.zeros((n1, n2))
    for a in (-2, -1, 0, 1):
        for b in (-2, -1, 0, 1):
            r2 = (d1 + a * n1) ** 2 + (d2 + b * n2) ** 2
            k += np.exp(-r2 / (4.0 * t)) / (4.0 * np.pi * t)
    return k / k.sum()


def gaussian_convolution_oracle(f: np.ndarray, t: float, threshold: float = 1e-18) -> np.ndarray:
    """Periodic convolution of ``f`` with the heat kernel at time ``t``.

    Evaluated as a direct shifted sum over kernel taps (no transforms), so it
    is independent of the spectral path it is compared against.
    """
    f = np.asarray(f, dtype=np.float64)
    k = heat_kernel(f.shape, t)
    out = np.zeros_like(f)
    for i, j in zip(*np.nonzero(k > threshold)):
        out += k[i, j] * np.roll(f, (i, j), axis=(0, 1))
    return out


def high_freq_energy(field: np.ndarray, cutoff: float = np.pi / 2) -> float:
    """Spectral energy in modes with max(|z_i|, |z_j|) > cutoff, over N1*N2."""
    field = np.asarray(field, dtype=np.float64)
    if not np.all(np.isfinite(field)):
        raise ValueError("field must be finite")
    n1, n2 = field.shape
    zi = wrapped_frequencies(n1)[:, None]
    zj = wrapped_frequencies(n2)[None, :]
    mask = np.maximum(zi, zj) > cutoff
    power = np.abs(dft2(field)) ** 2
    return float(power[mask].sum() / (n1 * n2))
