"""Define-by-run reverse-mode differentiation over float64 numpy arrays."""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

_sequence = itertools.count()


class Node:
    """One recorded operation. ``seq`` is a global append counter, so sorting
    by it gives a topological order of any graph built by running code."""

    __slots__ = ("seq", "tag", "inputs", "backward_fn", "output_ref")

    def __init__(self, tag: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.seq = next(_sequence)
        self.tag = tag
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.require(data, np.float64, "C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)

    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __sub__(self, other):
        from .ops import sub

        return sub(self, other)


def tracked(tensors: Sequence[Tensor]) -> bool:
    return any(t.requires_grad for t in tensors)


def record(tag: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out`` and register ``backward_fn(grad_out) -> grads per input``
    if any input participates in differentiation."""
    t = Tensor(out)
    if tracked(inputs):
        t.requires_grad = True
        t.node = Node(tag, inputs, backward_fn)
        t.node.output_ref = id(t)
    return t


def graph_nodes(root: Tensor) -> list[Node]:
    """Nodes reachable from ``root`` in append order."""
    seen: dict[int, Node] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        n = t.node
        if n is None or id(n) in seen:
            continue
        seen[id(n)] = n
        stack.extend(n.inputs)
    return sorted(seen.values(), key=lambda n: n.seq)


def backward(root: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that
    requires it. Nodes are visited once each, in strict reverse append order;
    gradients reaching a tensor through several consumers are summed."""
    if grad is None:
        if root.data.size != 1:
            raise ValueError("backward without an explicit gradient needs a scalar")
        grad = np.ones_like(root.data)
    grad = np.asarray(grad, dtype=np.float64)
    if root.node is None:
        if root.requires_grad:
            root.grad = grad.copy() if root.grad is None else root.grad + grad
        return
    pending: dict[int, np.ndarray] = {id(root): grad}
    for node in reversed(graph_nodes(root)):
        g = pending.pop(node.output_ref, None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, input_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.node is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            else:
                key = id(t)
                pending[key] = gi if key not in pending else pending[key] + gi
