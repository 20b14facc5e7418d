"""Differentiable operations used by the unrolled despeckler.

Each op computes its forward value with numpy and registers a closure that
maps the upstream gradient to one gradient per input (``None`` where the
input is a constant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .. import spectral
from . import kernels
from .tensor import Tensor, record

Scalar = Union[int, float]


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(a, float(b))
    _same_shape(a, b, "add")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(a, -float(b))
    _same_shape(a, b, "sub")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def add_scalar(a: Tensor, c: Scalar) -> Tensor:
    return record("add_scalar", a.data + c, (a,), lambda g: (g,))


def scale(a: Tensor, c: Scalar) -> Tensor:
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log_floor(x: Tensor, floor: float) -> Tensor:
    """ln(max(x, floor)); zero gradient where the floor is active."""
    active = x.data > floor
    safe = np.where(active, x.data, floor)
    return record("log_floor", np.log(safe), (x,), lambda g: (np.where(active, g / safe, 0.0),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return record("exp", y, (x,), lambda g: (g * y,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return record("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum_squares(x: Tensor) -> Tensor:
    d = x.data
    return record("sum_squares", np.array(np.sum(d * d)), (x,), lambda g: (2.0 * g * d,))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) with constant weights; a generic scalar probe."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError("weights must match the tensor shape")
    return record("weighted_sum", np.array(np.sum(x.data * w)), (x,), lambda g: (g * w,))


# --- convolution -----------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """3x3 cross-correlation with zero padding 1; [B,Cin,H,W] -> [B,Cout,H,W]."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects 4D input and kernel")
    B, cin, H, W = x.shape
    cout, kin, kh, kw = weight.shape
    if (kh, kw) != (3, 3):
        raise ValueError("only 3x3 kernels are supported")
    if kin != cin:
        raise ValueError(f"conv2d: kernel expects {kin} input channels, input has {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    w2 = weight.data.reshape(cout, cin * 9)
    cols = kernels.im2col3x3(x.data).reshape(B, cin * 9, H * W)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(B, cout, H, W)
    del cols
    xdata = x.data

    def backward(g):
        g3 = g.reshape(B, cout, H * W)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.matmul(np.ascontiguousarray(w2.T), g3).reshape(B, cin * 9, H, W)
            gx = kernels.col2im3x3(gcols, cin)
        if weight.requires_grad:
            cols_ = kernels.im2col3x3(xdata).reshape(B, cin * 9, H * W)
            gw = np.matmul(g3, cols_.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record("conv2d", out, inputs, backward)


# --- batch normalization ---------------------------------------------------


@dataclass
class BatchNormState:
    """Running statistics; ``momentum`` is the weight kept on the old value."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def batch_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool
) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError("batch_norm expects [B, C, H, W]")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError("batch_norm: gamma/beta must have one entry per channel")
    shp = (1, C, 1, 1)
    if training:
        n = B * H * W
        if n < 2:
            raise ValueError("batch_norm in train mode needs at least 2 values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean.reshape(shp)
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * inv_std.reshape(shp)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mean
        state.running_var = m * state.running_var + (1.0 - m) * var
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean.reshape(shp)) * inv_std.reshape(shp)
    out = xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)
    gam = gamma.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gam.reshape(shp)
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3)).reshape(shp)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shp)
                gx = inv_std.reshape(shp) / n * (n * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std.reshape(shp)
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return record("batch_norm", out, (x, gamma, beta), backward)


# --- diffusion and loss ----------------------------------------------------


def spectral_diffusion(x: Tensor, tau: float) -> Tensor:
    """One implicit heat step per image over the last two axes.

    The multiplier is real and even, so the operator is self-adjoint and the
    backward pass applies the same filter to the upstream gradient.
    """
    if not tau >= 0:
        raise ValueError("tau must be >= 0")
    out = spectral.implicit_heat_step(x.data, tau)
    return record(
        "spectral_diffusion", out, (x,), lambda g: (spectral.implicit_heat_step(g, tau),)
    )


LN2 = math.log(2.0)


def logcosh(r: np.ndarray) -> np.ndarray:
    a = np.abs(r)
    return a + np.log1p(np.exp(-2.0 * a)) - LN2


def logcosh_loss(pred: Tensor, target: Tensor, c: float = 0.0) -> Tensor:
    """mean(log cosh(target - pred + c)) over every element."""
    _same_shape(pred, target, "logcosh_loss")
    r = target.data - pred.data + c
    count = r.size
    value = np.array(np.sum(logcosh(r)) / count)
    t = np.tanh(r) / count
    return record("logcosh_loss", value, (pred, target), lambda g: (-g * t, g * t))


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape(pred, target, "mse")
    d = pred.data - target.data
    n = d.size
    return record(
        "mse", np.array(np.sum(d * d) / n), (pred, target), lambda g: (2 * g * d / n, -2 * g * d / n)
    )
