"""Sample generation for the location pretext task and the inside/outside baseline.

A location sample is a parent window ``p_y`` at level ``y`` and one of the
``4**n`` same-sized windows at level ``x = y + n`` that tile it; the label is
the child's row-major index. Both windows are resized to the network input
size before they are stored.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from ._parallel import ordered_map
from .errors import AmbiguousMatch, ConfigError, DataFormatError, ExhaustedRetries, IoError
from .pyramid import PatchRef, PyramidImage, children_set, extract, quantize, whiteness

SHARD_MAGIC = b"PSSL"
SHARD_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


@dataclass
class SamplerConfig:
    n: int = 2
    patch_size: int = 64
    input_size: int = 32
    # probabilities for the highest, second-highest and third-highest level
    level_probs: tuple[float, ...] = (0.4, 0.4, 0.2)
    white_reject: float = 0.5
    max_retries: int = 100
    seed: int = 0

    def __post_init__(self):
        self.level_probs = tuple(float(p) for p in self.level_probs)

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"zoom difference n must be >= 1, got {self.n}")
        if abs(sum(self.level_probs) - 1.0) > 1e-9 or min(self.level_probs) < 0:
            raise ConfigError(f"level_probs must be a probability vector, got {self.level_probs}")
        if self.patch_size < 1 or self.input_size < 1:
            raise ConfigError("patch_size and input_size must be positive")
        if not 0.0 <= self.white_reject <= 1.0:
            raise ConfigError(f"white_reject must lie in [0, 1], got {self.white_reject}")


@dataclass
class PretextSample:
    parent: np.ndarray
    child: np.ndarray
    label: int
    source: tuple = ()  # (pyramid id, parent PatchRef, child index)
    parent_raw: np.ndarray | None = field(default=None, repr=False)
    child_raw: np.ndarray | None = field(default=None, repr=False)


@dataclass
class PairSample:
    parent: np.ndarray
    child: np.ndarray
    label: int  # 1 when the child lies inside the parent


def level_distribution(top: int, cfg: SamplerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Candidate child levels (highest first) and their sampling probabilities.

    Levels that leave no room for a parent ``n`` levels below are dropped and
    the remaining probabilities renormalised.
    """
    levels = np.array([top - i for i in range(len(cfg.level_probs))])
    probs = np.array(cfg.level_probs, dtype=float)
    ok = levels - cfg.n >= 0
    if not ok.any() or probs[ok].sum() == 0:
        raise ConfigError(f"a pyramid with top level {top} cannot host n={cfg.n}")
    return levels[ok], probs[ok] / probs[ok].sum()


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres (align_corners=False), edge-clamped
    scale = n_in / n_out
    pos = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize_bilinear(pixels: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Bilinear resize of an ``(H, W, C)`` array with half-pixel sample centres.

    Halving a dimension this way averages exact pixel pairs, so downsampling
    by 2 equals 2x2 mean pooling.
    """
    width = height if width is None else width
    h, w = pixels.shape[:2]
    if (h, w) == (height, width):
        return pixels.astype(np.float64, copy=True)
    rows = _interp_matrix(h, height)
    cols = _interp_matrix(w, width)
    return np.einsum("ih,hwc,jw->ijc", rows, pixels, cols, optimize=True)


def _draw_window(img: PyramidImage, cfg: SamplerConfig, rng: np.random.Generator):
    """Parent window and child index; both resized patches must pass the white filter."""
    levels, probs = level_distribution(img.top, cfg)
    size = cfg.patch_size
    for _ in range(cfg.max_retries):
        x = int(rng.choice(levels, p=probs))
        y = x - cfg.n
        h, w = img.shape(y)
        if h < size or w < size:
            raise ConfigError(f"level {y} ({h}x{w}) is smaller than patch_size {size}")
        ref = PatchRef(y, int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)),
                       size, size)
        index = int(rng.integers(0, 4 ** cfg.n))
        parent_raw = extract(img, ref)
        parent = quantize(resize_bilinear(parent_raw, cfg.input_size))
        if whiteness(parent) > cfg.white_reject:
            continue
        child_ref = children_set(ref, cfg.n, img.top)[index]
        child_raw = extract(img, child_ref)
        child = quantize(resize_bilinear(child_raw, cfg.input_size))
        if whiteness(child) <= cfg.white_reject:
            return ref, index, parent_raw, parent, child_raw, child
    raise ExhaustedRetries(f"no parent/child pair with whiteness <= {cfg.white_reject} "
                           f"after {cfg.max_retries} draws")


def sample_location(img: PyramidImage, cfg: SamplerConfig, rng: np.random.Generator,
                    pyramid_id: str = "", keep_raw: bool = False) -> PretextSample:
    ref, index, parent_raw, parent, child_raw, child = _draw_window(img, cfg, rng)
    return PretextSample(
        parent, child, index, (pyramid_id, ref, index),
        parent_raw if keep_raw else None, child_raw if keep_raw else None,
    )


def block_pool(pixels: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = pixels.shape
    return pixels.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def location_distances(parent: np.ndarray, child: np.ndarray, n: int) -> np.ndarray:
    """Squared L2 distance between the pooled child and each parent sub-block."""
    side = 1 << n
    pooled = block_pool(child, side)
    bh, bw = pooled.shape[:2]
    if parent.shape[0] != bh * side or parent.shape[1] != bw * side:
        raise ValueError(f"parent {parent.shape} and child {child.shape} do not match n={n}")
    blocks = parent.reshape(side, bh, side, bw, -1).transpose(0, 2, 1, 3, 4)
    return ((blocks - pooled) ** 2).sum(axis=(2, 3, 4)).ravel()


def locate_oracle(parent: np.ndarray, child: np.ndarray, n: int, tol: float = 1e-12) -> int:
    """Brute-force location label of ``child`` inside ``parent`` (pre-resize pixels)."""
    d = location_distances(parent, child, n)
    order = np.argsort(d, kind="stable")
    if d[order[1]] - d[order[0]] <= tol:
        raise AmbiguousMatch(f"blocks {order[0]} and {order[1]} match equally well")
    return int(order[0])


def sample_pair(img: PyramidImage, cfg: SamplerConfig, rng: np.random.Generator,
                other: PyramidImage | None = None) -> tuple[PairSample, PairSample]:
    """Two location samples; with probability 0.5 their children are exchanged.

    The second sample comes from ``other`` when given, otherwise from ``img``.
    """
    a = sample_location(img, cfg, rng)
    b = sample_location(img if other is None else other, cfg, rng)
    if rng.random() < 0.5:
        return PairSample(a.parent, b.child, 0), PairSample(b.parent, a.child, 0)
    return PairSample(a.parent, a.child, 1), PairSample(b.parent, b.child, 1)


# -- augmentation -----------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    rot90: int = 0
    child_contrast: float = 1.0
    crop_area: float = 1.0
    crop_row: float = 0.0  # offset as a fraction of the free margin
    crop_col: float = 0.0
    parent_contrast: float = 1.0


CONTRAST_RANGE = (0.8, 1.25)
CROP_RANGE = (0.8, 1.0)


def draw_augmentation(rng: np.random.Generator, contrast_range=CONTRAST_RANGE,
                      crop_range=CROP_RANGE) -> AugmentParams:
    return AugmentParams(
        flip_h=bool(rng.random() < 0.5),
        flip_v=bool(rng.random() < 0.5),
        rot90=int(rng.integers(0, 4)),
        child_contrast=float(rng.uniform(*contrast_range)),
        crop_area=float(rng.uniform(*crop_range)),
        crop_row=float(rng.random()),
        crop_col=float(rng.random()),
        parent_contrast=float(rng.uniform(*contrast_range)),
    )


def adjust_contrast(pixels: np.ndarray, factor: float) -> np.ndarray:
    """Scale deviations from the per-channel mean by ``factor`` and clamp to [0, 1]."""
    mean = pixels.mean(axis=(0, 1), keepdims=True)
    return np.clip(mean + factor * (pixels - mean), 0.0, 1.0)


def random_crop(pixels: np.ndarray, area: float, row_frac: float, col_frac: float) -> np.ndarray:
    h, w = pixels.shape[:2]
    side = math.sqrt(area)
    ch, cw = max(1, round(h * side)), max(1, round(w * side))
    if (ch, cw) == (h, w):
        return pixels
    r = int(round(row_frac * (h - ch)))
    c = int(round(col_frac * (w - cw)))
    return resize_bilinear(pixels[r:r + ch, c:c + cw], h, w)


def apply_augmentation(parent: np.ndarray, child: np.ndarray,
                       params: AugmentParams) -> tuple[np.ndarray, np.ndarray]:
    if params.flip_h:
        child = child[:, ::-1]
    if params.flip_v:
        child = child[::-1]
    if params.rot90:
        child = np.rot90(child, params.rot90)
    if params.child_contrast != 1.0:
        child = adjust_contrast(child, params.child_contrast)
    child = random_crop(child, params.crop_area, params.crop_row, params.crop_col)
    if params.parent_contrast != 1.0:
        parent = adjust_contrast(parent, params.parent_contrast)
    return np.ascontiguousarray(parent), np.ascontiguousarray(child)


def augment(sample: PretextSample, rng: np.random.Generator) -> PretextSample:
    """Geometric and contrast jitter on the child, contrast only on the parent."""
    parent, child = apply_augmentation(sample.parent, sample.child, draw_augmentation(rng))
    return replace(sample, parent=parent, child=child)


# -- shards -----------------------------------------------------------------

@dataclass
class Shard:
    labels: np.ndarray
    parents: np.ndarray  # uint8, (count, S, S, 3)
    children: np.ndarray
    n: int
    input_size: int

    def __len__(self) -> int:
        return len(self.labels)


def write_shard(path: str | os.PathLike, labels, parents, children, n: int,
                input_size: int) -> None:
    labels = np.asarray(labels, dtype=np.uint32)
    parents = np.asarray(parents, dtype=np.uint8)
    children = np.asarray(children, dtype=np.uint8)
    shape = (len(labels), input_size, input_size, 3)
    if parents.shape != shape or children.shape != shape:
        raise DataFormatError(f"pixel arrays must have shape {shape}")
    record = np.dtype([("label", "<u4"), ("parent", "u1", shape[1:]), ("child", "u1", shape[1:])])
    records = np.empty(len(labels), dtype=record)
    records["label"], records["parent"], records["child"] = labels, parents, children
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(SHARD_MAGIC, SHARD_VERSION, n, input_size, len(labels)))
            fh.write(records.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write shard {path}: {exc}") from exc


def read_shard(path: str | os.PathLike) -> Shard:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read shard {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, n, size, count = _HEADER.unpack_from(raw)
    if magic != SHARD_MAGIC or version != SHARD_VERSION:
        raise DataFormatError(f"{path}: bad magic/version {magic!r}/{version}")
    record = np.dtype([("label", "<u4"), ("parent", "u1", (size, size, 3)),
                       ("child", "u1", (size, size, 3))])
    body = raw[_HEADER.size:]
    if len(body) != count * record.itemsize:
        raise DataFormatError(f"{path}: expected {count} records, found {len(body) / record.itemsize:g}")
    rec = np.frombuffer(body, dtype=record)
    return Shard(rec["label"].astype(np.int64), rec["parent"].copy(), rec["child"].copy(), n, size)


# -- dataset building -------------------------------------------------------

_WORKER_PYRAMIDS: dict = {}


def _load(cohort_root: str, pyramid_path: str) -> PyramidImage:
    from .pyramid import read_pyramid

    key = (cohort_root, pyramid_path)
    if key not in _WORKER_PYRAMIDS:
        _WORKER_PYRAMIDS[key] = read_pyramid(Path(cohort_root) / pyramid_path)
    return _WORKER_PYRAMIDS[key]


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.round(x * 255.0).astype(np.uint8)


def _generate_chunk(indices, cohort_root: str, paths: list[str], cfg: SamplerConfig, task: str):
    labels, parents, children = [], [], []
    for i in indices:
        rng = np.random.default_rng([cfg.seed, i])
        pid = int(rng.integers(len(paths)))
        img = _load(cohort_root, paths[pid])
        if task == "location":
            samples = [sample_location(img, cfg, rng, paths[pid])]
        else:
            # the two halves of a pair are independent draws from the whole pool
            other = _load(cohort_root, paths[int(rng.integers(len(paths)))])
            samples = list(sample_pair(img, cfg, rng, other))
        for s in samples:
            labels.append(s.label)
            parents.append(_to_u8(s.parent))
            children.append(_to_u8(s.child))
    return labels, parents, children


def build_dataset(cohort, cfg: SamplerConfig, count: int, out: str | os.PathLike,
                  split_ratio: tuple[float, float] = (0.92, 0.08), task: str = "location",
                  threads: int = 1, chunk: int = 256) -> dict:
    """Write ``train.shard``, ``val.shard`` and ``dataset.json`` under ``out``.

    Only train-split patients are sampled. Sample (or pair) ``i`` uses the
    RNG stream ``(seed, i)``; the output does not depend on ``threads``.
    """
    cfg.validate()
    if task not in ("location", "pair"):
        raise ConfigError(f"unknown pretext task {task!r}")
    if count < 2:
        raise ConfigError("count must be at least 2")
    train = cohort.by_split("train")
    if not train:
        raise ConfigError("cohort has no train-split patients")
    paths = [p.pyramid_path for p in train]

    per_draw = 1 if task == "location" else 2
    draws = math.ceil(count / per_draw)
    batches = [range(s, min(s + chunk, draws)) for s in range(0, draws, chunk)]
    work = partial(_generate_chunk, cohort_root=str(cohort.root), paths=paths, cfg=cfg, task=task)
    labels, parents, children = [], [], []
    for lab, par, chi in ordered_map(work, batches, threads):
        labels += lab
        parents += par
        children += chi
    labels, parents, children = labels[:count], parents[:count], children[:count]

    n_train = int(round(count * split_ratio[0] / sum(split_ratio)))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    s = cfg.input_size

    def stack(arrs):
        return np.stack(arrs) if arrs else np.empty((0, s, s, 3), np.uint8)

    write_shard(out / "train.shard", labels[:n_train], stack(parents[:n_train]),
                stack(children[:n_train]), cfg.n, s)
    write_shard(out / "val.shard", labels[n_train:], stack(parents[n_train:]),
                stack(children[n_train:]), cfg.n, s)
    meta = {
        "task": task,
        "count": count,
        "train_count": n_train,
        "val_count": count - n_train,
        "split_ratio": list(split_ratio),
        "num_classes": 4 ** cfg.n if task == "location" else 2,
        "cohort": str(cohort.root),
        "patients": [p.patient_id for p in train],
        "sampler": asdict(cfg),
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2))
    return meta


def read_dataset(path: str | os.PathLike) -> tuple[dict, Shard, Shard]:
    root = Path(path)
    try:
        meta = json.loads((root / "dataset.json").read_text())
    except OSError as exc:
        raise IoError(f"cannot read {root}/dataset.json: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{root}/dataset.json is not valid JSON") from exc
    return meta, read_shard(root / "train.shard"), read_shard(root / "val.shard")
