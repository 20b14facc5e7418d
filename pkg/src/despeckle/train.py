"""Minibatch Adam training of the unrolled net on speckled patches."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import ops
from .autodiff.optim import AdamState, adam_step
from .autodiff.tensor import Tensor
from .imaging import LOG_FLOOR, PatchSet
from .model import UnrolledNet, forward
from .rng import Stream
from .speckle import NoiseSpec, log_speckle_bias, sample_speckle

log = logging.getLogger(__name__)

SHUFFLE_STREAM = 5
PATCH_NOISE_STREAM = 17


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Schedule:
    """The full-scale preset uses epochs=50, batch_size=128, lr_drop_epoch=31."""

    epochs: int = 5
    batch_size: int = 16
    lr: float = 1e-3
    lr_after: float = 1e-4
    lr_drop_epoch: int = 31
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        """Learning rate of 1-based ``epoch``."""
        return self.lr if epoch < self.lr_drop_epoch else self.lr_after


@dataclass
class TrainResult:
    net: UnrolledNet
    history: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)


def add_noise(patches: PatchSet, spec: NoiseSpec) -> PatchSet:
    """Fill ``patches.noisy`` with f = u * eta from the patch-noise stream."""
    eta = sample_speckle(patches.clean.shape, spec, stream=PATCH_NOISE_STREAM)
    patches.noisy = patches.clean * eta
    return patches


def network_inputs(noisy: np.ndarray, floor: float = LOG_FLOOR) -> np.ndarray:
    """Noisy Unit values as the net sees them at inference: clipped to [0, 1]
    (as after byte export), floored, logged."""
    return np.log(np.maximum(np.clip(noisy, 0.0, 1.0), floor))


def train(
    net: UnrolledNet,
    patches: PatchSet,
    spec: NoiseSpec,
    schedule: Schedule,
    on_step: Optional[Callable[[int, int, float], None]] = None,
) -> TrainResult:
    if len(patches) == 0:
        raise ValueError("cannot train on an empty patch set")
    if patches.noisy is None:
        add_noise(patches, spec)
    c = log_speckle_bias(spec.looks)
    x_all = network_inputs(patches.noisy)[:, None]
    y_all = np.log(np.maximum(patches.clean, LOG_FLOOR))[:, None]
    n = len(patches)
    params = net.parameters()
    state = AdamState(learning_rate=schedule.lr)
    result = TrainResult(net)
    shuffle = Stream(schedule.seed, SHUFFLE_STREAM)
    for epoch in range(1, schedule.epochs + 1):
        state.learning_rate = schedule.lr_at(epoch)
        order = np.argsort(shuffle.uniform(n), kind="stable")
        losses = []
        for start in range(0, n, schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            net.zero_grad()
            where = (
                f"epoch {epoch}, batch {start // schedule.batch_size}"
                f" (lr={state.learning_rate}, step={state.step_count})"
            )
            try:
                pred = forward(net, Tensor(x_all[idx]), mode="train")
                loss = ops.logcosh_loss(pred, Tensor(y_all[idx]), c)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingDiverged(f"loss became {value} at {where}")
                loss.backward()
            except ValueError as exc:
                # non-finite weights surface as non-finite activations or gradients
                if all(np.all(np.isfinite(p.data)) for p in params.values()):
                    raise
                raise TrainingDiverged(f"non-finite parameters at {where}") from exc
            grads = {name: p.grad for name, p in params.items()}
            if not all(g is None or np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite gradient at {where}")
            adam_step(params, grads, state)
            losses.append(value)
            if on_step is not None:
                on_step(epoch, start // schedule.batch_size, value)
        result.history.extend(losses)
        result.epoch_losses.append(float(np.mean(losses)))
        log.info("epoch %d loss %.6f", epoch, result.epoch_losses[-1])
    net.training_config = {
        **net.training_config,
        "tau_train": net.tau,
        "L": spec.looks,
        "noise_seed": spec.seed,
        "epochs": schedule.epochs,
        "batch_size": schedule.batch_size,
        "lr": schedule.lr,
        "lr_after": schedule.lr_after,
        "lr_drop_epoch": schedule.lr_drop_epoch,
        "seed": schedule.seed,
        "patches": n,
        "patch_size": patches.patch_size,
    }
    net.zero_grad()
    return result
