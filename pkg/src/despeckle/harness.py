"""Experiment commands behind the command line. Each writes its outputs and a
manifest into one output directory and returns an in-memory summary."""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import spectral
from .adversary import AttackConfig, attack_report, model_target, pgd_attack
from .checkpoint import encode_checkpoint, load_checkpoint
from .config import format_config
from .imaging import (
    Domain,
    Image,
    encode_pgm,
    extract_patches,
    quantize,
    read_pgm,
    to_unit,
)
from .manifest import OutputDir, RunManifest, sha256_file
from .metrics import full_reference, reference_free
from .model import Architecture, UnrolledNet, init_net, predict_image
from .speckle import NoiseSpec, log_speckle_bias, sample_speckle
from .train import Schedule, train

SEED_STRIDE = 10
METRIC_COLUMNS = {
    "full": ("psnr", "ssim"),
    "free": ("enl", "cx", "epd_roa_hd", "epd_roa_vd"),
}


def list_pgms(path) -> list[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise FileNotFoundError(f"no .pgm files in {path}")
    return files


def unit_to_byte_image(a: np.ndarray) -> Image:
    return Image(quantize(a * 255.0).astype(np.float64), Domain.BYTE255)


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return str(v)


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    widths = {c: max(len(c), *(len(_fmt(r.get(c))) for r in rows)) for c in columns}
    lines = ["  ".join(c.ljust(widths[c]) for c in columns)]
    for r in rows:
        lines.append("  ".join(_fmt(r.get(c)).ljust(widths[c]) for c in columns))
    return "\n".join(lines) + "\n"


def jsonl(rows: Iterable[dict]) -> str:
    import json

    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return "inf" if v > 0 else "-inf"
        return v

    return "".join(json.dumps({k: clean(v) for k, v in r.items()}, sort_keys=True) + "\n" for r in rows)


def mean_row(rows: Sequence[dict], columns: Sequence[str], label_key: str = "image") -> dict:
    """Arithmetic mean over the finite entries of each column."""
    out = {label_key: "mean"}
    for c in columns:
        vals = [r[c] for r in rows if isinstance(r.get(c), (int, float)) and math.isfinite(r[c])]
        out[c] = float(np.mean(vals)) if vals else None
    return out


# --- simulate --------------------------------------------------------------


def cmd_simulate(
    input_dir,
    out_dir,
    looks: int = 4,
    seed: int = 0,
    realizations: int = 10,
    force: bool = False,
    workers: int = 1,
    config: Optional[dict] = None,
) -> RunManifest:
    """Write ``realizations`` speckled copies per clean image. Realization r of
    image i uses seed ``seed + i * max(10, realizations) + r``."""
    inputs = list_pgms(input_dir)
    out = OutputDir(out_dir, force)
    stride = max(SEED_STRIDE, realizations)
    jobs = []
    for i, p in enumerate(inputs):
        for r in range(realizations):
            jobs.append((p, f"{p.stem}_L{looks}_r{r}.pgm", seed + i * stride + r))
    out.check(name for _, name, _ in jobs)

    def run(job):
        path, name, s = job
        u = to_unit(read_pgm(path))
        eta = sample_speckle(u.shape, NoiseSpec(looks, s))
        return name, encode_pgm(unit_to_byte_image(u.pixels * eta))

    for name, data in _map(run, jobs, workers):
        out.write_bytes(name, data)
    m = RunManifest("simulate", config or {"noise.L": looks, "noise.seed": seed, "noise.realizations": realizations})
    m.seeds = {name: s for _, name, s in jobs}
    m.hash_inputs(inputs)
    m.output_hashes = dict(out.hashes)
    m.write(out.path)
    return m


# --- train -----------------------------------------------------------------


def architecture_from_config(cfg: dict) -> Architecture:
    return Architecture(K=cfg["model.K"], channels=cfg["model.channels"], tied=cfg["model.tied"])


def schedule_from_config(cfg: dict) -> Schedule:
    return Schedule(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch"],
        lr=cfg["train.lr"],
        lr_after=cfg["train.lr_after"],
        lr_drop_epoch=cfg["train.lr_drop_epoch"],
        seed=cfg["train.seed"],
    )


def train_from_images(images: Sequence[Image], cfg: dict):
    """Patch extraction, initialization and training as configured."""
    patches = extract_patches(images, cfg["train.patch_size"], cfg["train.patches"], cfg["train.seed"])
    net = init_net(architecture_from_config(cfg), cfg["model.tau_train"], cfg["train.seed"])
    result = train(net, patches, NoiseSpec(cfg["noise.L"], cfg["noise.seed"]), schedule_from_config(cfg))
    return result


def cmd_train(cfg: dict, out_dir, force: bool = False) -> RunManifest:
    if not cfg.get("paths.train_dir"):
        raise ValueError("paths.train_dir is not set")
    inputs = list_pgms(cfg["paths.train_dir"])
    out = OutputDir(out_dir, force)
    out.check(["checkpoint.dspk", "loss.txt", "loss_steps.txt", "config.cfg"])
    images = [to_unit(read_pgm(p)) for p in inputs]
    result = train_from_images(images, cfg)
    data = encode_checkpoint(result.net)
    out.write_bytes("checkpoint.dspk", data)
    out.write_text(
        "loss.txt", "".join(f"{e}\t{v!r}\n" for e, v in enumerate(result.epoch_losses, 1))
    )
    out.write_text("loss_steps.txt", "".join(f"{v!r}\n" for v in result.history))
    m = RunManifest("train", dict(cfg))
    m.seeds = {"train.seed": cfg["train.seed"], "noise.seed": cfg["noise.seed"]}
    m.hash_inputs(inputs)
    m.checkpoint_hash = out.hashes["checkpoint.dspk"]
    out.write_text("config.cfg", format_config(cfg))
    m.output_hashes = dict(out.hashes)
    m.write(out.path)
    return m


# --- denoise / sweep -------------------------------------------------------


def checkpoint_bias(net: UnrolledNet) -> float:
    """Log-speckle bias for the looks the checkpoint was trained at; 0 for a
    checkpoint without a training record (debug / hand-built nets)."""
    looks = net.training_config.get("L")
    return 0.0 if looks is None else log_speckle_bias(int(looks))


_REALIZATION_SUFFIX = re.compile(r"_L\d+_r\d+$")


def find_reference(noisy: Path, clean_dir: Optional[Path]) -> Optional[Path]:
    """Clean file with the same name, or with the simulate suffix removed."""
    if clean_dir is None:
        return None
    clean_dir = Path(clean_dir)
    for stem in (noisy.stem, _REALIZATION_SUFFIX.sub("", noisy.stem)):
        cand = clean_dir / f"{stem}.pgm"
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no clean reference for {noisy.name} in {clean_dir}")


def cmd_denoise(
    checkpoint,
    inputs,
    out_dir,
    tau: Optional[float] = None,
    clean_dir=None,
    force: bool = False,
    workers: int = 1,
) -> RunManifest:
    net = load_checkpoint(checkpoint)
    tau_used = net.tau if tau is None else float(tau)
    if tau_used < 0:
        raise ValueError("tau must be >= 0")
    c = checkpoint_bias(net)
    files = list_pgms(inputs)
    out = OutputDir(out_dir, force)
    out.check(f"{p.stem}_denoised.pgm" for p in files)

    def run(p: Path):
        f = to_unit(read_pgm(p))
        u = predict_image(net, f, tau_used, c)
        img = unit_to_byte_image(u.pixels)
        row = None
        ref = find_reference(p, clean_dir)
        if ref is not None:
            row = {"image": p.name, **full_reference(read_pgm(ref), img).as_dict()}
        return p, encode_pgm(img), row

    rows = []
    for p, data, row in _map(run, files, workers):
        out.write_bytes(f"{p.stem}_denoised.pgm", data)
        if row is not None:
            rows.append(row)
    m = RunManifest("denoise", {"tau": tau_used, "checkpoint": str(checkpoint), "c": c})
    m.hash_inputs(files)
    m.checkpoint_hash = sha256_file(checkpoint)
    if rows:
        cols = ("image",) + METRIC_COLUMNS["full"]
        rows_all = rows + [mean_row(rows, METRIC_COLUMNS["full"])]
        out.write_text("metrics.txt", format_table(rows_all, cols))
        out.write_text("metrics.jsonl", jsonl(rows))
        m.metrics = rows
    m.output_hashes = dict(out.hashes)
    m.write(out.path)
    return m


def cmd_sweep_tau(
    checkpoint, image, taus: Sequence[float], out_dir, clean=None, force: bool = False,
    cutoff: float = math.pi / 2,
) -> list[dict]:
    """One restoration per tau plus a (tau, high-frequency energy, PSNR) table.
    Energy is measured on the Unit-domain output before byte quantization."""
    if not taus:
        raise ValueError("tau list is empty")
    if any(t < 0 for t in taus):
        raise ValueError("tau values must be >= 0")
    net = load_checkpoint(checkpoint)
    c = checkpoint_bias(net)
    image = Path(image)
    f = to_unit(read_pgm(image))
    y = read_pgm(clean) if clean is not None else None
    out = OutputDir(out_dir, force)
    names = {t: f"{image.stem}_tau{t:.4f}.pgm" for t in taus}
    out.check(set(names.values()) | {"sweep.txt", "sweep.jsonl"})
    rows, cache = [], {}
    for t in taus:
        if t not in cache:
            u = predict_image(net, f, t, c)
            img = unit_to_byte_image(u.pixels)
            row = {"tau": float(t), "hf_energy": spectral.high_freq_energy(u.pixels, cutoff)}
            if y is not None:
                row["psnr"] = full_reference(y, img).psnr
            out.write_bytes(names[t], encode_pgm(img))
            cache[t] = row
        rows.append(dict(cache[t]))
    cols = ("tau", "hf_energy") + (("psnr",) if y is not None else ())
    out.write_text("sweep.txt", format_table(rows, cols))
    out.write_text("sweep.jsonl", jsonl(rows))
    m = RunManifest("sweep-tau", {"taus": list(taus), "cutoff": cutoff, "checkpoint": str(checkpoint)})
    m.hash_inputs([image] + ([Path(clean)] if clean is not None else []))
    m.checkpoint_hash = sha256_file(checkpoint)
    m.metrics = rows
    m.output_hashes = dict(out.hashes)
    m.write(out.path)
    return rows


# --- attack ----------------------------------------------------------------


def delta_image(f_adv: np.ndarray, f: np.ndarray) -> Image:
    """|f_adv - f| min-max rescaled to [0, 255] (all zeros if constant)."""
    d = np.abs(f_adv - f)
    lo, hi = d.min(), d.max()
    scaled = np.zeros_like(d) if hi == lo else (d - lo) / (hi - lo) * 255.0
    return Image(scaled, Domain.BYTE255)


def cmd_attack(
    checkpoint, noisy, clean, out_dir, cfg: AttackConfig, tau: Optional[float] = None,
    force: bool = False,
):
    net = load_checkpoint(checkpoint)
    c = checkpoint_bias(net)
    target = model_target(net, tau, c)
    f = to_unit(read_pgm(noisy))
    y = to_unit(read_pgm(clean))
    if f.shape != y.shape:
        raise ValueError("noisy and clean images differ in shape")
    out = OutputDir(out_dir, force)
    out.check(["adversarial.pgm", "delta.pgm", "restored_before.pgm", "restored_after.pgm", "attack.json"])
    f_adv = pgd_attack(target, f, y, cfg)
    report = attack_report(target, f, f_adv, y)
    from .autodiff.tensor import Tensor

    out.write_bytes("adversarial.pgm", encode_pgm(unit_to_byte_image(f_adv.pixels)))
    out.write_bytes("delta.pgm", encode_pgm(delta_image(f_adv.pixels, f.pixels)))
    out.write_bytes("restored_before.pgm", encode_pgm(unit_to_byte_image(target(Tensor(f.pixels)).data)))
    out.write_bytes("restored_after.pgm", encode_pgm(unit_to_byte_image(target(Tensor(f_adv.pixels)).data)))
    sidecar = {
        "epsilon": cfg.epsilon,
        "alpha": cfg.alpha,
        "steps": cfg.steps,
        "seed": cfg.seed,
        "random_start": cfg.random_start,
        "tau": net.tau if tau is None else tau,
        **report.as_dict(),
    }
    out.write_text("attack.json", jsonl([sidecar]))
    m = RunManifest("attack", sidecar)
    m.seeds = {"attack.seed": cfg.seed}
    m.hash_inputs([Path(noisy), Path(clean)])
    m.checkpoint_hash = sha256_file(checkpoint)
    m.metrics = [report.as_dict()]
    m.output_hashes = dict(out.hashes)
    m.write(out.path)
    return f_adv, report


# --- evaluate --------------------------------------------------------------


def cmd_evaluate(
    mode: str, reference_dir, test_dir, out_dir, force: bool = False, workers: int = 1
) -> list[dict]:
    """``full``: reference = clean images, PSNR/SSIM. ``free``: reference =
    noisy images, ENL/Cx/EPD-ROA of the test images. Files pair by name."""
    if mode not in METRIC_COLUMNS:
        raise ValueError("mode must be 'full' or 'free'")
    tests = list_pgms(test_dir)
    refs = {p.name: p for p in list_pgms(reference_dir)}
    missing = [p.name for p in tests if p.name not in refs]
    if missing:
        raise ValueError(f"no reference for {missing}")
    out = OutputDir(out_dir, force)
    out.check(["metrics.txt", "metrics.jsonl"])

    def run(p: Path):
        a, b = read_pgm(refs[p.name]), read_pgm(p)
        if a.shape != b.shape:
            raise ValueError(f"{p.name}: shape mismatch {a.shape} vs {b.shape}")
        rep = full_reference(a, b) if mode == "full" else reference_free(a, b)
        return {"image": p.name, **rep.as_dict()}

    rows = _map(run, tests, workers)
    cols = METRIC_COLUMNS[mode]
    out.write_text("metrics.txt", format_table(rows + [mean_row(rows, cols)], ("image",) + cols))
    out.write_text("metrics.jsonl", jsonl(rows))
    m = RunManifest("evaluate", {"mode": mode})
    m.hash_inputs(list(refs.values()) + tests)
    m.metrics = rows
    m.output_hashes = dict(out.hashes)
    m.write(out.path)
    return rows


# --- diffuse ---------------------------------------------------------------


def cmd_diffuse(
    image, out_dir, tau: float, steps: int = 1, log_domain: bool = False, force: bool = False
) -> Image:
    """Apply ``steps`` implicit heat steps to one image (optionally in the log domain)."""
    image = Path(image)
    f = to_unit(read_pgm(image))
    a = np.log(np.maximum(f.pixels, 1.0 / 255.0)) if log_domain else f.pixels
    for _ in range(steps):
        a = spectral.implicit_heat_step(a, tau)
    if log_domain:
        a = np.exp(a)
    out = OutputDir(out_dir, force)
    name = f"{image.stem}_diffused.pgm"
    img = unit_to_byte_image(a)
    out.write_bytes(name, encode_pgm(img))
    m = RunManifest("diffuse", {"tau": tau, "steps": steps, "log_domain": log_domain})
    m.hash_inputs([image])
    m.output_hashes = dict(out.hashes)
    m.write(out.path)
    return img


# --- test cards ------------------------------------------------------------


def testcard(kind: str = "constant", size: int = 512, value: int = 128, seed: int = 0) -> Image:
    """``constant``: a flat card; ``shapes``: a flat background with a few
    rectangles and disks at seeded positions and gray levels."""
    if kind == "constant":
        return Image(np.full((size, size), float(value)), Domain.BYTE255)
    if kind != "shapes":
        raise ValueError("kind must be 'constant' or 'shapes'")
    from .rng import Stream

    s = Stream(seed, 31)
    img = np.full((size, size), float(value))
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(8):
        cy, cx_, r, level, disk = s.uniform(5)
        cy, cx_, r = cy * size, cx_ * size, (0.05 + 0.2 * r) * size
        mask = ((yy - cy) ** 2 + (xx - cx_) ** 2 <= r * r) if disk < 0.5 else (
            (np.abs(yy - cy) <= r) & (np.abs(xx - cx_) <= r)
        )
        img[mask] = np.floor(20 + 215 * level)
    return Image(img, Domain.BYTE255)
