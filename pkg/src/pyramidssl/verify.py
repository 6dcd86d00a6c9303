"""Self-checks: the brute-force location oracle and finite-difference gradients of every op."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nncore import (Tensor, avgpool2d, concat, conv2d, dense, flatten, global_avgpool,
                     gradcheck, maxpool2d, relu, sigmoid_cross_entropy, softmax_cross_entropy)
from .pretext import SamplerConfig, locate_oracle, sample_location
from .synth import DEFAULT_TEXTURES, SynthSpec, generate_pyramid

GRAD_TOL = 1e-4


@dataclass
class OracleReport:
    total: int = 0
    matched: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.total > 0 and self.matched == self.total


def oracle_check(count: int = 1000, seed: int = 0, pyramids: int = 4, base_size: int = 32,
                 n: int = 2) -> OracleReport:
    """Draw ``count`` location samples and re-derive each label from raw pixels."""
    imgs = [
        generate_pyramid(SynthSpec(seed=seed + i, levels=4, base_size=base_size, class_id=i % 4,
                                   texture=DEFAULT_TEXTURES[i % 4]))
        for i in range(pyramids)
    ]
    cfg = SamplerConfig(n=n, patch_size=16, input_size=16, seed=seed)
    rng = np.random.default_rng(seed)
    report = OracleReport()
    for i in range(count):
        s = sample_location(imgs[i % pyramids], cfg, rng, keep_raw=True)
        got = locate_oracle(s.parent_raw, s.child_raw, n)
        report.total += 1
        if got == s.label:
            report.matched += 1
        else:
            report.mismatches.append((i, s.label, got))
    return report


# -- gradient suite ---------------------------------------------------------

def _away_from_zero(rng, shape, gap=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap, x)


def _distinct(rng, shape):
    """Values with pairwise gaps far above the difference step, so max-pool argmaxes stay put."""
    size = int(np.prod(shape))
    return (rng.permutation(size) * 0.05 + rng.uniform(0, 0.01, size)).reshape(shape)


def _t(data, name):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


def _case(op: str, rng):
    """A fresh randomly shaped ``(fn, inputs)`` pair for ``op``."""
    b = int(rng.integers(1, 4))
    if op == "relu":
        x = _t(_away_from_zero(rng, (b, int(rng.integers(1, 7)))), "x")
        return lambda: relu(x), [x]
    if op == "dense":
        i, o = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        x, w, bias = _t(rng.standard_normal((b, i)), "x"), _t(rng.standard_normal((i, o)), "w"), \
            _t(rng.standard_normal(o), "b")
        return lambda: dense(x, w, bias), [x, w, bias]
    if op in ("conv2d_same", "conv2d_valid"):
        k = int(rng.choice([1, 3]))
        h, wd = int(rng.integers(k, 6)), int(rng.integers(k, 6))
        ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        x = _t(rng.standard_normal((b, h, wd, ci)), "x")
        w, bias = _t(rng.standard_normal((k, k, ci, co)), "w"), _t(rng.standard_normal(co), "b")
        pad = op.split("_")[1]
        return lambda: conv2d(x, w, bias, pad), [x, w, bias]
    if op in ("maxpool2d", "avgpool2d"):
        shape = (b, 2 * int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        x = _t(_distinct(rng, shape), "x")
        pool = maxpool2d if op == "maxpool2d" else avgpool2d
        return lambda: pool(x, 2), [x]
    if op == "global_avgpool":
        x = _t(rng.standard_normal((b, int(rng.integers(1, 5)), int(rng.integers(1, 5)), 2)), "x")
        return lambda: global_avgpool(x), [x]
    if op == "concat":
        a = _t(rng.standard_normal((b, int(rng.integers(1, 4)))), "a")
        c = _t(rng.standard_normal((b, int(rng.integers(1, 4)))), "c")
        return lambda: concat([a, c], axis=1), [a, c]
    if op == "flatten":
        x = _t(rng.standard_normal((b, int(rng.integers(1, 4)), int(rng.integers(1, 4)), 2)), "x")
        return lambda: flatten(x), [x]
    if op == "softmax_cross_entropy":
        k = int(rng.integers(2, 6))
        z = _t(rng.standard_normal((b, k)), "logits")
        y = rng.integers(0, k, b)
        return lambda: softmax_cross_entropy(z, y), [z]
    if op == "sigmoid_cross_entropy":
        z = _t(rng.standard_normal((b, 1)), "logits")
        y = rng.integers(0, 2, b)
        return lambda: sigmoid_cross_entropy(z, y), [z]
    raise KeyError(op)


OPS = ("relu", "dense", "conv2d_same", "conv2d_valid", "maxpool2d", "avgpool2d",
       "global_avgpool", "concat", "flatten", "softmax_cross_entropy", "sigmoid_cross_entropy")


def gradient_suite(shapes_per_op: int = 20, seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Worst relative error per op over ``shapes_per_op`` random shapes (float64)."""
    rng = np.random.default_rng(seed)
    worst = {}
    for op in OPS:
        errs = []
        for _ in range(shapes_per_op):
            fn, inputs = _case(op, rng)
            errs += list(gradcheck(fn, inputs, h=h, seed=int(rng.integers(2**31))).values())
        worst[op] = max(errs)
    return worst
