"""Flat ``key = value`` run configuration with typed defaults.

Unknown keys are rejected. ``format_config`` writes every key in sorted order
and ``parse_config`` reads that text back to the same mapping.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

# key -> (type, default). A default of None means "unset" (optional).
SCHEMA: dict[str, tuple[type, Any]] = {
    "noise.L": (int, 4),
    "noise.seed": (int, 0),
    "noise.realizations": (int, 10),
    "model.K": (int, 5),
    "model.tau_train": (float, 0.1),
    "model.channels": (int, 64),
    "model.tied": (bool, False),
    "train.epochs": (int, 5),
    "train.batch": (int, 16),
    "train.lr": (float, 1e-3),
    "train.lr_after": (float, 1e-4),
    "train.lr_drop_epoch": (int, 31),
    "train.patches": (int, 200),
    "train.patch_size": (int, 40),
    "train.seed": (int, 0),
    "attack.epsilon": (float, 4.0 / 255.0),
    "attack.alpha": (float, 1.0 / 255.0),
    "attack.steps": (int, 10),
    "attack.seed": (int, 0),
    "attack.random_start": (bool, False),
    "inference.tau": (float, None),
    "paths.train_dir": (str, None),
}

PRESETS = ("desk", "full")


class ConfigError(ValueError):
    pass


def defaults() -> dict[str, Any]:
    return {k: d for k, (_, d) in SCHEMA.items()}


def _convert(key: str, raw: str) -> Any:
    typ, _ = SCHEMA[key]
    raw = raw.strip()
    if raw == "":
        return None
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}") from None


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def parse_config(text: str, source: str = "<config>") -> dict[str, Any]:
    """Defaults overlaid with the assignments in ``text``."""
    cfg = defaults()
    cfg.update(parse_assignments(text.splitlines(), source))
    return cfg


def format_value(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in sorted(cfg))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("despeckle").joinpath(f"presets/{name}.cfg").read_text()


def load_config(
    path: Optional[Path] = None,
    preset: Optional[str] = None,
    overrides: Iterable[str] = (),
) -> dict[str, Any]:
    """Resolve defaults <- preset <- file <- ``key=value`` overrides."""
    cfg = defaults()
    if preset:
        cfg.update(parse_assignments(preset_text(preset).splitlines(), f"preset:{preset}"))
    if path is not None:
        cfg.update(parse_assignments(Path(path).read_text().splitlines(), str(path)))
    cfg.update(parse_assignments(overrides, "--set"))
    return cfg
