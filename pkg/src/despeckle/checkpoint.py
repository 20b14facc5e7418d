"""Binary checkpoint container.

Layout::

    8 bytes   magic b"DSPKLCK1"
    8 bytes   header length n, unsigned little-endian
    n bytes   UTF-8 JSON header (sorted keys, compact separators)
    payload   little-endian float64 tensors, concatenated in directory order

The header carries ``format_version``, ``architecture``, ``training_config``,
``tau`` and a ``tensors`` directory of ``{name, shape, offset, nbytes}`` with
offsets relative to the start of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .imaging import atomic_write_bytes
from .model import Architecture, UnrolledNet

MAGIC = b"DSPKLCK1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def encode_checkpoint(net: UnrolledNet) -> bytes:
    tensors = net.named_tensors()
    directory = []
    payload = []
    offset = 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        payload.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": net.arch.to_dict(),
        "tau": net.tau,
        "training_config": net.training_config,
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(payload)


def decode_checkpoint(data: bytes, expect: Optional[Architecture] = None) -> UnrolledNet:
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + hlen:
        raise TruncatedCheckpointError("header is truncated")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    arch = Architecture.from_dict(header["architecture"])
    if expect is not None and expect != arch:
        raise ArchitectureMismatchError(f"file architecture {arch} differs from expected {expect}")
    wanted = arch.tensor_shapes()
    entries = {e["name"]: e for e in header["tensors"]}
    unknown = sorted(set(entries) - set(wanted))
    missing = sorted(set(wanted) - set(entries))
    if unknown:
        raise ArchitectureMismatchError(f"unknown tensors in checkpoint: {unknown[:5]}")
    if missing:
        raise ArchitectureMismatchError(f"checkpoint lacks tensors: {missing[:5]}")
    net = UnrolledNet(arch, float(header["tau"]), training_config=header.get("training_config", {}))
    payload = memoryview(data)[16 + hlen :]
    for name, shape in wanted.items():
        e = entries[name]
        if tuple(e["shape"]) != tuple(shape):
            raise ArchitectureMismatchError(f"{name}: shape {e['shape']} != expected {list(shape)}")
        n = int(np.prod(shape)) * 8
        if e["nbytes"] != n:
            raise CheckpointError(f"{name}: directory size {e['nbytes']} != {n}")
        if e["offset"] + n > len(payload):
            raise TruncatedCheckpointError(f"payload ends before tensor {name}")
        arr = np.frombuffer(payload[e["offset"] : e["offset"] + n], dtype="<f8")
        net.set_tensor(name, arr.astype(np.float64).reshape(shape))
    used = sum(e["nbytes"] for e in entries.values())
    if len(payload) != used:
        raise CheckpointError(f"{len(payload) - used} bytes beyond the tensor directory")
    return net


def save_checkpoint(net: UnrolledNet, path) -> str:
    """Write atomically; returns the SHA-256 of the file contents."""
    data = encode_checkpoint(net)
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path, expect: Optional[Architecture] = None) -> UnrolledNet:
    return decode_checkpoint(Path(path).read_bytes(), expect)
