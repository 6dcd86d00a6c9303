"""Reverse-mode automatic differentiation over numpy arrays."""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import GraphNotEvaluated

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, evaluation)."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """An array node in the computation graph.

    ``requires_grad`` leaves are parameters; gradients accumulate into their
    ``grad`` when :meth:`backward` runs on a downstream scalar.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        backward(self, grad)


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    """Wrap an op result; record the graph edge only when some input needs grads."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    out.op = op
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Propagate d(loss)/d(node) to every parameter upstream of ``loss``.

    Inputs that do not require gradients are left untouched. Intermediate
    gradients are released once consumed.
    """
    if loss._backward is None:
        raise GraphNotEvaluated(
            "backward() needs a tensor produced by recorded operations on parameters"
        )
    if grad is None:
        if loss.data.size != 1:
            raise GraphNotEvaluated("implicit gradient only defined for scalar outputs")
        grad = np.ones_like(loss.data)
    order = topological_order(loss)
    loss.grad = np.asarray(grad, dtype=loss.data.dtype)
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is not None and parent.requires_grad:
                _accumulate(parent, g)
        node.grad = None
        node._parents = ()
        node._backward = None
