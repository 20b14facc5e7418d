"""Run manifests and guarded output directories."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .imaging import atomic_write_bytes

MANIFEST_NAME = "manifest.json"


class OutputExistsError(FileExistsError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class RunManifest:
    command: str
    config_snapshot: dict
    seeds: dict = field(default_factory=dict)
    input_hashes: dict = field(default_factory=dict)
    output_hashes: dict = field(default_factory=dict)
    checkpoint_hash: Optional[str] = None
    metrics: Optional[list] = None
    timestamp: str = field(
        default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    )

    def hash_inputs(self, paths: Iterable) -> None:
        for p in paths:
            self.input_hashes[str(p)] = sha256_file(p)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        text = json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"
        atomic_write_bytes(path, text.encode("utf-8"))
        return path


class OutputDir:
    """Creates the output directory and refuses to replace existing files
    unless ``force`` is set. Records a hash of everything written."""

    def __init__(self, path, force: bool = False):
        self.path = Path(path)
        self.force = force
        self.path.mkdir(parents=True, exist_ok=True)
        self.hashes: dict[str, str] = {}

    def target(self, name: str) -> Path:
        p = self.path / name
        if p.exists() and not self.force and name not in self.hashes:
            raise OutputExistsError(f"{p} exists; pass --force to overwrite")
        return p

    def check(self, names: Iterable[str]) -> None:
        for n in names:
            self.target(n)

    def write_bytes(self, name: str, data: bytes) -> Path:
        p = self.target(name)
        atomic_write_bytes(p, data)
        self.hashes[name] = hashlib.sha256(data).hexdigest()
        return p

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode("utf-8"))

    def record(self, name: str) -> None:
        self.hashes[name] = sha256_file(self.path / name)
