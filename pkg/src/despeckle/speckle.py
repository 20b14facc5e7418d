"""Multiplicative Gamma speckle: simulation and the log-speckle bias."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .imaging import Domain, DomainError, Image
from .rng import stream_key, to_uniform, words

SPECKLE_STREAM = 7

# Bernoulli-number coefficients B_2k / (2k) of the digamma asymptotic series
_DIGAMMA_SERIES = (
    1.0 / 12,
    -1.0 / 120,
    1.0 / 252,
    -1.0 / 240,
    1.0 / 132,
    -691.0 / 32760,
    1.0 / 12,
)


def digamma(x: float) -> float:
    """psi(x) for x > 0: upward recurrence to x >= 10, then the asymptotic series."""
    if not x > 0:
        raise ValueError("digamma is implemented for x > 0 only")
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for coef in _DIGAMMA_SERIES:
        series += coef * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


@dataclass(frozen=True)
class NoiseSpec:
    looks: int
    seed: int = 0

    def __post_init__(self):
        if int(self.looks) != self.looks or self.looks < 1:
            raise ValueError("looks must be an integer >= 1")


def log_speckle_bias(looks: int) -> float:
    """E[ln eta] = psi(L) - ln L for eta ~ Gamma(shape=L, scale=1/L)."""
    if looks < 1:
        raise ValueError("looks must be >= 1")
    return digamma(float(looks)) - math.log(looks)


def sample_gamma(shape, looks: float, seed: int, stream: int = SPECKLE_STREAM) -> np.ndarray:
    """Unit-mean Gamma(looks, 1/looks) draws by Marsaglia-Tsang squeeze.

    Element ``e`` of ``n`` at rejection round ``r`` consumes the three words
    ``3*(r*n + e) + {0, 1, 2}`` of the keyed stream: two uniforms for a
    Box-Muller normal and one for the acceptance test. The result therefore
    does not depend on evaluation order.
    """
    if looks < 1:
        raise ValueError("Marsaglia-Tsang branch requires looks >= 1")
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s < 1 for s in shape):
        raise ValueError("shape must have positive dimensions")
    n = int(np.prod(shape))
    key = stream_key(seed, stream)
    d = looks - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    pending = np.arange(n, dtype=np.uint64)
    r = 0
    while pending.size:
        base = np.uint64(3) * (np.uint64(r * n) + pending)
        u1 = to_uniform(words(key, base))
        u2 = to_uniform(words(key, base + np.uint64(1)))
        u3 = to_uniform(words(key, base + np.uint64(2)))
        x = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        v = (1.0 + c * x) ** 3
        ok = v > 0
        logv = np.log(np.where(ok, v, 1.0))
        ok &= np.log(u3) < 0.5 * x * x + d - d * v + d * logv
        idx = pending[ok].astype(np.int64)
        out[idx] = d * v[ok] / looks
        pending = pending[~ok]
        r += 1
    return out.reshape(shape)


def sample_speckle(shape, spec: NoiseSpec, stream: int = SPECKLE_STREAM) -> np.ndarray:
    return sample_gamma(shape, spec.looks, spec.seed, stream)


def apply_speckle(
    clean: Image, spec: NoiseSpec, eta: Optional[np.ndarray] = None
) -> Image:
    """f = u * eta, left unclamped. ``eta`` overrides sampling (test injection)."""
    if clean.domain is not Domain.UNIT:
        raise DomainError("speckle is applied to Unit-domain images")
    if eta is None:
        eta = sample_speckle(clean.shape, spec)
    return Image(clean.pixels * eta, Domain.UNIT)
