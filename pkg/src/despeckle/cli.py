"""Command-line entry point: ``despeckle <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--preset", choices=("desk", "full"), help="named config preset")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], help="config override")
    p.add_argument("--seed", type=int, help="overrides every *.seed key")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")
    p.add_argument("--deterministic", action="store_true", help="single-threaded BLAS")
    p.add_argument("--workers", type=int, default=1, metavar="N", help="parallel images")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="despeckle", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="add Gamma speckle to clean PGM images")
    p.add_argument("inputs", help="clean .pgm file or directory")
    p.add_argument("--looks", type=int, help="number of looks L (default noise.L)")
    p.add_argument("--realizations", type=int, help="noisy copies per image")
    _common(p)

    p = sub.add_parser("train", help="train a despeckling network")
    p.add_argument("--data", help="training image directory (paths.train_dir)")
    _common(p)

    p = sub.add_parser("denoise", help="restore noisy images with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("inputs", help="noisy .pgm file or directory")
    p.add_argument("--tau", type=float, help="diffusion time step (default: training tau)")
    p.add_argument("--clean", help="directory of clean references for PSNR/SSIM")
    _common(p)

    p = sub.add_parser("sweep-tau", help="restore one image at several tau values")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--taus", type=float, nargs="+",
                   default=[0.06, 0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20])
    p.add_argument("--clean", help="clean reference image")
    _common(p)

    p = sub.add_parser("attack", help="denoising-PGD against a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("noisy")
    p.add_argument("clean")
    p.add_argument("--tau", type=float, help="inference tau (default: training tau)")
    _common(p)

    p = sub.add_parser("evaluate", help="metric tables for paired images")
    p.add_argument("mode", choices=("full", "free"),
                   help="full: PSNR/SSIM against clean; free: ENL/Cx/EPD-ROA against noisy")
    p.add_argument("reference", help="clean (full) or noisy (free) directory")
    p.add_argument("test", help="directory of images to score")
    _common(p)

    p = sub.add_parser("diffuse", help="apply implicit heat steps to one image")
    p.add_argument("image")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--log-domain", action="store_true")
    _common(p)

    p = sub.add_parser("testcard", help="write a synthetic clean test card")
    p.add_argument("--kind", choices=("constant", "shapes"), default="constant")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--value", type=int, default=128)
    _common(p)
    return ap


def resolve_config(args) -> dict:
    from .config import load_config

    cfg = load_config(args.config, args.preset, args.set)
    if args.seed is not None:
        for k in cfg:
            if k.endswith(".seed"):
                cfg[k] = args.seed
    return cfg


def run(args) -> int:
    from . import harness
    from .adversary import AttackConfig
    from .imaging import encode_pgm
    from .manifest import OutputDir, RunManifest

    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "simulate":
        if args.looks is not None:
            cfg["noise.L"] = args.looks
        if args.realizations is not None:
            cfg["noise.realizations"] = args.realizations
        m = harness.cmd_simulate(
            args.inputs, args.out, cfg["noise.L"], cfg["noise.seed"], cfg["noise.realizations"],
            args.force, args.workers, cfg,
        )
        print(f"wrote {len(m.output_hashes)} images to {args.out}")
    elif cmd == "train":
        if args.data:
            cfg["paths.train_dir"] = args.data
        m = harness.cmd_train(cfg, args.out, args.force)
        print(f"checkpoint sha256 {m.checkpoint_hash}")
    elif cmd == "denoise":
        tau = args.tau if args.tau is not None else cfg["inference.tau"]
        m = harness.cmd_denoise(
            args.checkpoint, args.inputs, args.out, tau, args.clean, args.force, args.workers
        )
        if m.metrics:
            print((Path(args.out) / "metrics.txt").read_text(), end="")
    elif cmd == "sweep-tau":
        harness.cmd_sweep_tau(args.checkpoint, args.image, args.taus, args.out, args.clean, args.force)
        print((Path(args.out) / "sweep.txt").read_text(), end="")
    elif cmd == "attack":
        acfg = AttackConfig(
            cfg["attack.epsilon"], cfg["attack.alpha"], cfg["attack.steps"],
            cfg["attack.seed"], cfg["attack.random_start"],
        )
        tau = args.tau if args.tau is not None else cfg["inference.tau"]
        _, rep = harness.cmd_attack(args.checkpoint, args.noisy, args.clean, args.out, acfg, tau, args.force)
        print(f"psnr before {rep.psnr_before:.4f}  after {rep.psnr_after:.4f}  "
              f"linf {rep.linf:.6f}  l2 {rep.l2:.6f}")
    elif cmd == "evaluate":
        harness.cmd_evaluate(args.mode, args.reference, args.test, args.out, args.force, args.workers)
        print((Path(args.out) / "metrics.txt").read_text(), end="")
    elif cmd == "diffuse":
        harness.cmd_diffuse(args.image, args.out, args.tau, args.steps, args.log_domain, args.force)
    elif cmd == "testcard":
        seed = args.seed if args.seed is not None else 0
        img = harness.testcard(args.kind, args.size, args.value, seed)
        out = OutputDir(args.out, args.force)
        out.write_bytes(f"testcard_{args.kind}.pgm", encode_pgm(img))
        m = RunManifest("testcard", {"kind": args.kind, "size": args.size, "value": args.value})
        m.seeds = {"seed": seed}
        m.output_hashes = dict(out.hashes)
        m.write(out.path)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        # must happen before numpy loads its BLAS
        for var in THREAD_VARS:
            os.environ[var] = "1"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .config import ConfigError
    from .manifest import OutputExistsError

    try:
        return run(args)
    except (ConfigError, OutputExistsError, FileNotFoundError, ValueError) as e:
        print(f"despeckle {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
