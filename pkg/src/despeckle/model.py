"""Residual DnCNN-style denoiser blocks unrolled with implicit heat steps.

Stage k computes ``z = block_k(u)`` then ``u = (I - tau Lap)^-1 z``; the net
returns the state after the K-th diffusion step. ``tau`` is a free inference
knob: it is never trained.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.ops import BatchNormState
from .autodiff.tensor import Tensor
from .imaging import LOG_FLOOR, Domain, Image
from .rng import Stream

INIT_STREAM = 3
LAYERS = 5


@dataclass(frozen=True)
class Architecture:
    K: int = 5
    channels: int = 64
    kernel: int = 3
    bn_layers: tuple = (2, 3, 4)
    tied: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.kernel != 3:
            raise ValueError("only 3x3 kernels are supported")
        object.__setattr__(self, "bn_layers", tuple(int(i) for i in self.bn_layers))
        if any(not 1 < i < LAYERS for i in self.bn_layers):
            raise ValueError("batch norm is only allowed on the inner layers 2..4")

    @property
    def n_blocks(self) -> int:
        return 1 if self.tied else self.K

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "channels": self.channels,
            "kernel": self.kernel,
            "bn_layers": list(self.bn_layers),
            "tied": self.tied,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            K=int(d["K"]),
            channels=int(d["channels"]),
            kernel=int(d.get("kernel", 3)),
            bn_layers=tuple(d.get("bn_layers", (2, 3, 4))),
            tied=bool(d.get("tied", False)),
        )

    def layer_shapes(self) -> dict[str, tuple]:
        """Trainable tensors of one block, in canonical order."""
        c = self.channels
        shapes: dict[str, tuple] = {}
        for layer in range(1, LAYERS + 1):
            cin = 1 if layer == 1 else c
            cout = 1 if layer == LAYERS else c
            shapes[f"conv{layer}.weight"] = (cout, cin, 3, 3)
            if layer in self.bn_layers:
                shapes[f"bn{layer}.gamma"] = (cout,)
                shapes[f"bn{layer}.beta"] = (cout,)
            else:
                shapes[f"conv{layer}.bias"] = (cout,)
        return shapes

    def buffer_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for layer in self.bn_layers:
            shapes[f"bn{layer}.running_mean"] = (self.channels,)
            shapes[f"bn{layer}.running_var"] = (self.channels,)
        return shapes

    def tensor_shapes(self) -> dict[str, tuple]:
        """Every named tensor a checkpoint of this architecture must hold."""
        out = {}
        for k in range(self.n_blocks):
            for name, s in {**self.layer_shapes(), **self.buffer_shapes()}.items():
                out[f"stage{k}.{name}"] = s
        return out


class DenoiserBlock:
    """``u - R(u)`` where R is conv+relu, three conv+BN+relu, then conv."""

    def __init__(self, arch: Architecture):
        self.arch = arch
        self.params: dict[str, Tensor] = {
            name: Tensor(np.zeros(shape), requires_grad=True, name=name)
            for name, shape in arch.layer_shapes().items()
        }
        self.bn: dict[int, BatchNormState] = {
            layer: BatchNormState.fresh(arch.channels) for layer in arch.bn_layers
        }

    def residual(self, u: Tensor, training: bool) -> Tensor:
        h = u
        p = self.params
        for layer in range(1, LAYERS + 1):
            bias = p.get(f"conv{layer}.bias")
            h = ops.conv2d(h, p[f"conv{layer}.weight"], bias)
            if layer in self.bn:
                h = ops.batch_norm(
                    h, p[f"bn{layer}.gamma"], p[f"bn{layer}.beta"], self.bn[layer], training
                )
            if layer < LAYERS:
                h = ops.relu(h)
        return h

    def __call__(self, u: Tensor, training: bool = False) -> Tensor:
        return ops.sub(u, self.residual(u, training))

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer, st in self.bn.items():
            out[f"bn{layer}.running_mean"] = st.running_mean
            out[f"bn{layer}.running_var"] = st.running_var
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        layer = int(name[2 : name.index(".")])
        if name.endswith("running_mean"):
            self.bn[layer].running_mean = value
        else:
            self.bn[layer].running_var = value


def denoiser_forward(block: DenoiserBlock, u: Tensor, mode: str = "eval") -> Tensor:
    if u.data.ndim != 4 or u.shape[1] != 1:
        raise ValueError(f"denoiser expects [B, 1, H, W], got {u.shape}")
    if u.shape[2] < 3 or u.shape[3] < 3:
        raise ValueError("denoiser needs H, W >= 3")
    return block(u, training=_training(mode))


def _training(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    return mode == "train"


@dataclass
class UnrolledNet:
    arch: Architecture
    tau: float = 0.1
    blocks: list = field(default_factory=list)
    training_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")
        if not self.blocks:
            self.blocks = [DenoiserBlock(self.arch) for _ in range(self.arch.n_blocks)]
        if len(self.blocks) != self.arch.n_blocks:
            raise ValueError("number of blocks does not match the architecture")

    def block(self, k: int) -> DenoiserBlock:
        return self.blocks[0] if self.arch.tied else self.blocks[k]

    def parameters(self) -> dict[str, Tensor]:
        return {
            f"stage{k}.{name}": t for k, b in enumerate(self.blocks) for name, t in b.params.items()
        }

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            f"stage{k}.{name}": a for k, b in enumerate(self.blocks) for name, a in b.buffers().items()
        }

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.parameters().items()}
        out.update(self.buffers())
        shapes = self.arch.tensor_shapes()
        return {name: out[name] for name in shapes}

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        stage, rest = name.split(".", 1)
        block = self.blocks[int(stage[len("stage") :])]
        if rest in block.params:
            block.params[rest].data = np.ascontiguousarray(value, dtype=np.float64)
        else:
            block.set_buffer(rest, np.ascontiguousarray(value, dtype=np.float64))

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None


def init_net(arch: Architecture, tau: float = 0.1, seed: int = 0) -> UnrolledNet:
    """Conv kernels ~ N(0, 2 / fan_in) drawn from one seeded stream in
    canonical tensor order; biases and BN shifts 0, BN scales 1."""
    net = UnrolledNet(arch, tau)
    stream = Stream(seed, INIT_STREAM)
    for name, t in net.parameters().items():
        if name.endswith(".weight"):
            fan_in = t.data.shape[1] * 9
            t.data = stream.normal(t.data.shape) * np.sqrt(2.0 / fan_in)
        elif name.endswith(".gamma"):
            t.data = np.ones(t.data.shape)
        else:
            t.data = np.zeros(t.data.shape)
    return net


def zero_weights(net: UnrolledNet) -> UnrolledNet:
    """Zero every conv kernel, making each block the identity map."""
    for name, t in net.parameters().items():
        if name.endswith(".weight"):
            t.data = np.zeros(t.data.shape)
    return net


def forward(
    net: UnrolledNet, log_f: Tensor, tau_override: Optional[float] = None, mode: str = "eval"
) -> Tensor:
    if not np.all(np.isfinite(log_f.data)):
        raise ValueError("network input must be finite")
    tau = net.tau if tau_override is None else float(tau_override)
    if not tau >= 0:
        raise ValueError("tau must be >= 0")
    u = log_f
    for k in range(net.arch.K):
        z = denoiser_forward(net.block(k), u, mode)
        u = ops.spectral_diffusion(z, tau)
    return u


def predict_tensor(
    net: UnrolledNet, f: Tensor, tau: Optional[float], c: float, floor: float = LOG_FLOOR
) -> Tensor:
    """Differentiable Unit -> Unit pipeline: exp(W(ln max(f, floor)) - c), clipped."""
    shape = f.shape
    x = ops.log_floor(f, floor)
    if x.data.ndim == 2:
        x = ops.reshape(x, (1, 1) + shape)
    y = forward(net, x, tau, mode="eval")
    y = ops.clip(ops.exp(ops.add_scalar(y, -c)), 0.0, 1.0)
    return ops.reshape(y, shape)


def predict_image(
    net: UnrolledNet, f: Image, tau: Optional[float] = None, c: float = 0.0
) -> Image:
    if f.domain is not Domain.UNIT:
        raise ValueError("predict_image expects a Unit-domain image")
    out = predict_tensor(net, Tensor(f.pixels), tau, c)
    return Image(out.data, Domain.UNIT)


# --- inference-time BN folding ---------------------------------------------


def fold_batchnorm(block: DenoiserBlock) -> list[tuple[np.ndarray, np.ndarray]]:
    """Eval-mode block as a plain conv stack: one (weight, bias) per layer."""
    stack = []
    for layer in range(1, LAYERS + 1):
        w = block.params[f"conv{layer}.weight"].data
        if layer in block.bn:
            st = block.bn[layer]
            s = block.params[f"bn{layer}.gamma"].data / np.sqrt(st.running_var + st.eps)
            w = w * s[:, None, None, None]
            b = block.params[f"bn{layer}.beta"].data - st.running_mean * s
        else:
            b = block.params[f"conv{layer}.bias"].data
        stack.append((w.copy(), b.copy()))
    return stack


def folded_block_forward(stack, u: np.ndarray) -> np.ndarray:
    h = Tensor(u)
    for i, (w, b) in enumerate(stack):
        h = ops.conv2d(h, Tensor(w), Tensor(b))
        if i < len(stack) - 1:
            h = ops.relu(h)
    return u - h.data


def lipschitz_ratio(
    block: DenoiserBlock, shape=(1, 1, 16, 16), pairs: int = 16, seed: int = 0, scale: float = 0.1
) -> float:
    """Largest observed ||D(u1) - D(u2)|| / ||u1 - u2|| over random nearby pairs.

    A diagnostic only: nothing in training enforces a bound on it.
    """
    stream = Stream(seed, 29)
    worst = 0.0
    for _ in range(pairs):
        u1 = stream.normal(shape)
        u2 = u1 + scale * stream.normal(shape)
        d1 = block(Tensor(u1)).data
        d2 = block(Tensor(u2)).data
        worst = max(worst, float(np.linalg.norm(d1 - d2) / np.linalg.norm(u1 - u2)))
    return worst

