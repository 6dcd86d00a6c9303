"""Differentiable layers. Images are NHWC; conv kernels are (kh, kw, C_in, C_out)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch
from .tensor import Tensor, make_node


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def back(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, back, "dense")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: str = "same") -> Tensor:
    """Stride-1 2-D convolution (cross-correlation) via im2col."""
    x = _as_tensor(x)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeMismatch(f"conv2d: input {x.shape} vs kernel {w.shape}")
    kh, kw, cin, cout = w.shape
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeMismatch("'same' padding needs odd kernel sizes")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    n, h, wd, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if ph or pw else x.data
    ho, wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} larger than input {h}x{wd}")
    # (n, ho, wo, cin, kh, kw) -> rows ordered (kh, kw, cin) to match the kernel layout
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, cout)

    def back(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, ph:ph + h, pw:pw + wd, :] if ph or pw else dxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, back, "conv2d")


def _pool_view(x: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    ho, wo = h // k, w // k
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"pool {k}x{k} on spatial size {h}x{w}")
    return x[:, :ho * k, :wo * k, :].reshape(n, ho, k, wo, k, c)


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    x = _as_tensor(x)
    v = _pool_view(x.data, k)
    n, ho, _, wo, _, c = v.shape
    flat = v.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gv = gflat.reshape(n, ho, wo, c, k, k).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * k, wo * k, c)
        gx = np.zeros_like(x.data)
        gx[:, :ho * k, :wo * k, :] = gv
        return (gx,)

    return make_node(out, (x,), back, "maxpool2d")


def avgpool2d(x: Tensor, k: int = 2) -> Tensor:
    x = _as_tensor(x)
    v = _pool_view(x.data, k)
    n, ho, _, wo, _, c = v.shape
    out = v.mean(axis=(2, 4))

    def back(g):
        gx = np.zeros_like(x.data)
        spread = np.broadcast_to(g[:, :, None, :, None, :] / (k * k), v.shape)
        gx[:, :ho * k, :wo * k, :] = spread.reshape(n, ho * k, wo * k, c)
        return (gx,)

    return make_node(out, (x,), back, "avgpool2d")


def global_avgpool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (N, H, W, C) -> (N, C)."""
    x = _as_tensor(x)
    n, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2))

    def back(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).copy(),)

    return make_node(out, (x,), back, "global_avgpool")


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].data.ndim
    ax = axis % ref
    for t in tensors:
        if t.data.ndim != ref or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax
        ):
            raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_node(out, tuple(tensors), back, "concat")


def flatten(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return make_node(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -sum(target * log softmax(logits)).

    ``targets`` is one-hot (N, K) or an integer label vector (N,).
    """
    t = np.asarray(targets)
    if t.ndim == 1:
        t = one_hot(t, logits.shape[1], logits.dtype)
    if t.shape != logits.shape:
        raise ShapeMismatch(f"targets {t.shape} vs logits {logits.shape}")
    n = logits.shape[0]
    logp = log_softmax(logits.data)
    loss = np.asarray(-(t * logp).sum() / n, dtype=logits.dtype)

    def back(g):
        return ((np.exp(logp) * t.sum(axis=1, keepdims=True) - t) * (g / n),)

    return make_node(loss, (logits,), back, "softmax_cross_entropy")


def sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of ``(N, 1)`` logits against 0/1 targets."""
    t = np.asarray(targets, dtype=logits.dtype).reshape(logits.shape)
    z = logits.data
    n = z.shape[0]
    loss = np.asarray((np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum() / n,
                      dtype=logits.dtype)
    return make_node(loss, (logits,), lambda g: ((sigmoid(z) - t) * (g / n),), "sigmoid_cross_entropy")
