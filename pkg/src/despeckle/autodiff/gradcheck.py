"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[..., Tensor],
    point: Sequence[np.ndarray],
    h: float = 1e-5,
    coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps one Tensor per entry of ``point`` to a scalar Tensor. With
    ``coords`` set, only that many randomly chosen coordinates of each input
    are probed (all of them otherwise).
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    arrays = [np.array(p, dtype=np.float64) for p in point]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = f(*tensors)
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, a in enumerate(arrays):
        analytic = tensors[k].grad
        if analytic is None:
            analytic = np.zeros_like(a)
        flat = a.reshape(-1)
        if coords is None or coords >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=coords, replace=False)
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            numeric[n] = _central_difference(f, arrays, k, int(i), h)
        err = relative_error(analytic.reshape(-1)[idx], numeric)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst


def _central_difference(f, arrays, k: int, i: int, h: float) -> float:
    vals = []
    for sign in (1.0, -1.0):
        shifted = [a.copy() for a in arrays]
        shifted[k].reshape(-1)[i] += sign * h
        vals.append(float(f(*[Tensor(s) for s in shifted]).data))
    return (vals[0] - vals[1]) / (2.0 * h)
