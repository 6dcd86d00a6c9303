"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|)``; pairs both below ``floor`` count as 0."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    rel = np.where(scale < floor, 0.0, err / np.where(scale < floor, 1.0, scale))
    return float(rel.max()) if rel.size else 0.0


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def gradcheck(fn: Callable[[], Tensor], inputs: list[Tensor], h: float = 1e-5,
              seed: int = 0) -> dict[str, float]:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    Non-scalar outputs are reduced with a fixed random weighting so every
    output element contributes. Returns the max relative error per input.
    """
    out = fn()
    weights = np.random.default_rng(seed).standard_normal(out.shape) if out.data.size > 1 else None
    for t in inputs:
        t.grad = None
    backward(out, weights)

    def scalar() -> float:
        with no_grad():
            val = fn().data
        return float(np.sum(val) if weights is None else np.sum(val * weights))

    errors = {}
    for i, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors[t.name or f"input{i}"] = relative_error(analytic, numeric_grad(scalar, t.data, h))
    return errors
