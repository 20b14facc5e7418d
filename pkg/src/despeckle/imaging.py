"""Grayscale images, binary PGM I/O, domain transforms and patch sampling."""

from __future__ import annotations

import enum
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .rng import Stream

LOG_FLOOR = 1.0 / 255.0

# stream index for patch sampling; other modules use other indices
PATCH_STREAM = 11


class Domain(enum.Enum):
    BYTE255 = "byte255"
    UNIT = "unit"
    LOG = "log"


class PGMError(ValueError):
    """Base class for PGM decoding failures."""


class MalformedHeaderError(PGMError):
    pass


class UnsupportedMaxvalError(PGMError):
    pass


class TruncatedPayloadError(PGMError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Image:
    """A 2D float64 field tagged with its value domain.

    Construction only checks shape and finiteness; ``validate`` checks the
    range invariant of the domain. Speckled images are tagged ``UNIT`` but may
    exceed 1 until they are exported, so the range check is not automatic.
    """

    pixels: np.ndarray
    domain: Domain

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be a nonempty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def validate(self) -> "Image":
        lo, hi = {Domain.BYTE255: (0.0, 255.0), Domain.UNIT: (0.0, 1.0)}.get(
            self.domain, (-np.inf, np.inf)
        )
        if self.pixels.min() < lo or self.pixels.max() > hi:
            raise DomainError(
                f"{self.domain.value} image has values outside [{lo}, {hi}]"
            )
        return self


def _require(img: Image, domain: Domain) -> None:
    if img.domain is not domain:
        raise DomainError(f"expected {domain.value} image, got {img.domain.value}")


# --- PGM -------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pgm(data: bytes) -> Image:
    if not data.startswith(b"P5"):
        raise MalformedHeaderError("not a binary PGM (magic must be P5)")
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise MalformedHeaderError("header ended early")
        if not m.group(1).isdigit():
            raise MalformedHeaderError(f"bad header field {m.group(1)!r}")
        fields.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} not supported (need 255)")
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise MalformedHeaderError("missing whitespace after maxval")
    pos += 1
    n = width * height
    payload = data[pos:]
    if len(payload) < n:
        raise TruncatedPayloadError(f"expected {n} pixel bytes, found {len(payload)}")
    if len(payload) > n:
        raise PGMError(f"{len(payload) - n} unexpected bytes after pixel data")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Image(px.astype(np.float64), Domain.BYTE255)


def read_pgm(path) -> Image:
    return decode_pgm(Path(path).read_bytes())


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Round half up, then clamp to [0, 255]."""
    return np.clip(np.floor(np.asarray(pixels, dtype=np.float64) + 0.5), 0, 255).astype(
        np.uint8
    )


def encode_pgm(img: Image) -> bytes:
    _require(img, Domain.BYTE255)
    header = b"P5\n%d %d\n255\n" % (img.width, img.height)
    return header + quantize(img.pixels).tobytes()


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pgm(img: Image, path) -> None:
    atomic_write_bytes(path, encode_pgm(img))


# --- domain transforms -----------------------------------------------------


def to_unit(img: Image) -> Image:
    _require(img, Domain.BYTE255)
    return Image(img.pixels / 255.0, Domain.UNIT)


def to_byte(img: Image) -> Image:
    _require(img, Domain.UNIT)
    return Image(np.clip(img.pixels * 255.0, 0.0, 255.0), Domain.BYTE255)


def log_transform(img: Image, floor: float = LOG_FLOOR) -> Image:
    _require(img, Domain.UNIT)
    if not floor > 0:
        raise ValueError("log floor must be positive")
    return Image(np.log(np.maximum(img.pixels, floor)), Domain.LOG)


def exp_transform(img: Image) -> Image:
    _require(img, Domain.LOG)
    return Image(np.clip(np.exp(img.pixels), 0.0, 1.0), Domain.UNIT)


# --- patches ---------------------------------------------------------------


def dihedral(a: np.ndarray, t: int) -> np.ndarray:
    """Element ``t`` of the 8-element dihedral group: optional left-right flip
    (t >= 4) followed by ``t % 4`` counter-clockwise quarter turns."""
    if not 0 <= t < 8:
        raise ValueError("dihedral index must be in 0..7")
    if t >= 4:
        a = a[:, ::-1]
    return np.ascontiguousarray(np.rot90(a, t % 4))


@dataclass
class PatchSet:
    """Square training patches; ``noisy`` stays ``None`` until speckle is applied.

    Both arrays have shape ``(count, patch_size, patch_size)`` in the Unit domain.
    """

    clean: np.ndarray
    patch_size: int
    seed: int
    noisy: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.clean.shape[0]

    def pairs(self) -> Iterator[tuple[Image, Optional[Image]]]:
        for i in range(len(self)):
            noisy = None if self.noisy is None else Image(self.noisy[i], Domain.UNIT)
            yield Image(self.clean[i], Domain.UNIT), noisy


def extract_patches(
    images: Sequence[Image], patch_size: int, count: int, seed: int
) -> PatchSet:
    """Draw ``count`` random dihedrally augmented patches from Unit images.

    Per patch, four uniforms from the patch stream choose (in order) the
    image index, top row, left column and dihedral transform.
    """
    if patch_size < 1:
        raise ValueError("patch_size must be positive")
    for img in images:
        _require(img, Domain.UNIT)
        if img.height < patch_size or img.width < patch_size:
            raise ValueError(
                f"image {img.height}x{img.width} smaller than patch size {patch_size}"
            )
    out = np.empty((count, patch_size, patch_size))
    if count == 0:
        return PatchSet(out, patch_size, seed)
    if not images:
        raise ValueError("no images to sample from")
    u = Stream(seed, PATCH_STREAM).uniform((count, 4))
    for n in range(count):
        img = images[int(u[n, 0] * len(images))]
        top = int(u[n, 1] * (img.height - patch_size + 1))
        left = int(u[n, 2] * (img.width - patch_size + 1))
        t = int(u[n, 3] * 8)
        crop = img.pixels[top : top + patch_size, left : left + patch_size]
        out[n] = dihedral(crop, t)
    return PatchSet(out, patch_size, seed)
