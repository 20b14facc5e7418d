"""Minimal reverse-mode autodiff: tensors, the ops the model needs, Adam."""

from .gradcheck import grad_check
from .kernels import BACKEND
from .ops import (
    BatchNormState,
    add,
    batch_norm,
    clip,
    conv2d,
    exp,
    log_floor,
    logcosh_loss,
    mean_squared_error,
    relu,
    reshape,
    scale,
    spectral_diffusion,
    sub,
    sum_squares,
    weighted_sum,
)
from .optim import AdamState, adam_step
from .tensor import Node, Tensor, backward, graph_nodes

__all__ = [
    "AdamState",
    "BACKEND",
    "BatchNormState",
    "Node",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "batch_norm",
    "clip",
    "conv2d",
    "exp",
    "grad_check",
    "graph_nodes",
    "log_floor",
    "logcosh_loss",
    "mean_squared_error",
    "relu",
    "reshape",
    "scale",
    "spectral_diffusion",
    "sub",
    "sum_squares",
    "weighted_sum",
]
