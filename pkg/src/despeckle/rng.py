"""Counter-based SplitMix64 random streams.

Every random quantity in the package comes from this module so that runs are
reproducible from recorded seeds, in any language. The generator:

    GOLDEN = 0x9E3779B97F4A7C15
    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)                          (all arithmetic mod 2**64)

    key(seed, stream) = mix64(seed ^ mix64(stream + GOLDEN))
    word(key, i)      = mix64(key + (i + 1) * GOLDEN)    for i = 0, 1, 2, ...

``word(key, 0), word(key, 1), ...`` is the SplitMix64 sequence started from
state ``key``; indexing by ``i`` lets whole arrays of draws be produced at once.

Conversions:

    uniform   u = ((word >> 12) + 0.5) * 2**-52          strictly inside (0, 1)
    normal    Box-Muller on consecutive uniform pairs (u1, u2):
              sqrt(-2 ln u1) * cos(2 pi u2)
    integer   floor(u * high)
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, stream: int = 0) -> int:
    s = np.array([(stream + 0x9E3779B97F4A7C15) & _MASK], dtype=np.uint64)
    k = np.array([seed & _MASK], dtype=np.uint64) ^ mix64(s)
    return int(mix64(k)[0])


def words(key: int, index: np.ndarray) -> np.ndarray:
    """Words ``word(key, i)`` for every ``i`` in ``index``."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = np.uint64(key) + (idx + np.uint64(1)) * GOLDEN
    return mix64(state)


def to_uniform(w: np.ndarray) -> np.ndarray:
    return ((w >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


class Stream:
    """Sequential view over one keyed stream; ``position`` counts words used."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.key = stream_key(self.seed, self.stream)
        self.position = 0

    def _take(self, n: int) -> np.ndarray:
        idx = np.arange(self.position, self.position + n, dtype=np.uint64)
        self.position += n
        return words(self.key, idx)

    def uniform(self, size) -> np.ndarray:
        n = int(np.prod(size))
        return to_uniform(self._take(n)).reshape(size)

    def normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        u = to_uniform(self._take(2 * n))
        u1, u2 = u[0::2], u[1::2]
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(size)

    def integers(self, high: int, size) -> np.ndarray:
        return np.floor(self.uniform(size) * high).astype(np.int64)
