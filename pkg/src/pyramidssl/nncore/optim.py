"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)  # per-parameter update counts


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None],
              state: AdamState) -> dict[str, np.ndarray]:
    """Update ``params`` in place and return them.

    Decay is applied to the weights (``p -= lr * wd * p``) before the
    bias-corrected Adam move. Entries whose gradient is ``None`` are skipped
    and keep their own bias-correction counter, so parameters unfrozen late
    start from a fresh correction.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        t = state.t[name] = state.t.get(name, 0) + 1
        c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                               weight_decay=weight_decay)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        trainable = {k: t for k, t in self.params.items() if t.requires_grad}
        adam_step({k: t.data for k, t in trainable.items()},
                  {k: t.grad for k, t in trainable.items()}, self.state)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
