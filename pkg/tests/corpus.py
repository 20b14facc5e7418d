"""Small real-image corpus built from the grayscale-convertible images that
ship inside scikit-image (no downloads)."""

from __future__ import annotations

import numpy as np
from skimage import color, data, io
from pathlib import Path

from despeckle.imaging import Domain, Image

TRAIN_NAMES = (
    "astronaut.png",
    "chelsea.png",
    "coffee.png",
    "coins.png",
    "moon.png",
    "page.png",
    "rocket.jpg",
    "motorcycle_left.png",
)
TEST_NAMES = ("camera.png", "clock_motion.png", "brick.png", "text.png", "horse.png")

_DATA_DIR = Path(data.__file__).parent


def _gray(name: str) -> np.ndarray:
    a = io.imread(_DATA_DIR / name)
    if a.ndim == 3:
        a = color.rgb2gray(a[..., :3])
    else:
        a = a.astype(np.float64)
        a = a / (255.0 if a.max() > 1 else 1.0)
    return np.clip(a.astype(np.float64), 0.0, 1.0)


def _square(a: np.ndarray, size: int) -> np.ndarray:
    """Central square crop, block-averaged down to ``size`` and quantized to bytes."""
    n = min(a.shape)
    f = n // size
    n = f * size
    top = (a.shape[0] - n) // 2
    left = (a.shape[1] - n) // 2
    c = a[top : top + n, left : left + n]
    small = c.reshape(size, f, size, f).mean(axis=(1, 3))
    return np.floor(small * 255.0 + 0.5) / 255.0


def train_images(size: int = 128) -> list[Image]:
    return [Image(_square(_gray(n), size), Domain.UNIT) for n in TRAIN_NAMES]


def test_images(size: int = 64) -> list[Image]:
    return [Image(_square(_gray(n), size), Domain.UNIT) for n in TEST_NAMES]
