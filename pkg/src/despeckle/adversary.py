"""Denoising-PGD: sign-gradient ascent on restoration error inside an
elementwise (L-infinity) budget around the noisy input."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor
from .imaging import Domain, Image, quantize
from .metrics import psnr
from .model import UnrolledNet, predict_tensor
from .rng import Stream

ATTACK_STREAM = 13

# differentiable denoiser: Unit-domain [H, W] tensor in, Unit-domain [H, W] tensor out
Target = Callable[[Tensor], Tensor]


class BudgetViolation(AssertionError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 4.0 / 255.0
    alpha: float = 1.0 / 255.0
    steps: int = 10
    seed: int = 0
    random_start: bool = False

    def __post_init__(self):
        if self.epsilon < 0 or self.alpha < 0:
            raise ValueError("epsilon and alpha must be nonnegative")
        if self.alpha > self.epsilon:
            raise ValueError("alpha must not exceed epsilon")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def model_target(net: UnrolledNet, tau: Optional[float], c: float) -> Target:
    return lambda f: predict_tensor(net, f, tau, c)


def attack_objective(target: Target, f: np.ndarray, clean: np.ndarray, with_grad: bool = True):
    """Squared L2 restoration error ||target(f) - clean||^2 (to be maximized)
    and, optionally, its gradient with respect to ``f``."""
    x = Tensor(f, requires_grad=with_grad)
    err = ops.sum_squares(ops.sub(target(x), Tensor(clean)))
    if not with_grad:
        return float(err.data), None
    err.backward()
    g = x.grad if x.grad is not None else np.zeros_like(f)
    return float(err.data), g


def pgd_attack(target: Target, f0: Image, clean: Image, cfg: AttackConfig) -> Image:
    if f0.shape != clean.shape:
        raise ValueError("noisy and clean images must have the same shape")
    base = f0.pixels
    eps = cfg.epsilon
    f = base.copy()
    if cfg.random_start:
        f = np.clip(base + Stream(cfg.seed, ATTACK_STREAM).uniform(base.shape) * 2 * eps - eps, 0, 1)
    for _ in range(cfg.steps):
        _, g = attack_objective(target, f, clean.pixels)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite input gradient during the attack")
        f = f + cfg.alpha * np.sign(g)
        f = base + np.clip(f - base, -eps, eps)
        f = np.clip(f, 0.0, 1.0)
        # clipping to [0, 1] only moves values toward base when base is in range
        if np.max(np.abs(f - base), initial=0.0) > eps + 1e-12:
            raise BudgetViolation("perturbation left the epsilon box")
    return Image(f, Domain.UNIT)


@dataclass
class AttackReport:
    psnr_before: float
    psnr_after: float
    linf: float
    l2: float

    @property
    def psnr_drop(self) -> float:
        return self.psnr_before - self.psnr_after

    def as_dict(self) -> dict:
        return asdict(self)


def _byte(a: np.ndarray) -> Image:
    return Image(quantize(a * 255.0).astype(np.float64), Domain.BYTE255)


def attack_report(target: Target, f0: Image, f_adv: Image, clean: Image) -> AttackReport:
    """PSNR (bytes) of the restorations of ``f0`` and ``f_adv``, plus the
    perturbation norms in the Unit domain."""
    if not (f0.shape == f_adv.shape == clean.shape):
        raise ValueError("shape mismatch")
    y = _byte(clean.pixels)
    before = _byte(target(Tensor(f0.pixels)).data)
    after = _byte(target(Tensor(f_adv.pixels)).data)
    d = f_adv.pixels - f0.pixels
    return AttackReport(
        psnr_before=psnr(y, before),
        psnr_after=psnr(y, after),
        linf=float(np.max(np.abs(d), initial=0.0)),
        l2=float(math.sqrt(np.sum(d * d))),
    )
