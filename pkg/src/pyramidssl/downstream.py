"""Downstream patch sets, patient-level majority voting and label-fraction subsets."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyRegion, FractionOutOfRange, NoPatches
from .pretext import resize_bilinear
from .pyramid import PatchRef, PyramidImage, extract, to_uint8, whiteness


@dataclass
class DownstreamConfig:
    tile: int = 64  # tile edge at the highest level (1024 at full scale)
    input_size: int = 32  # 112 at full scale
    white_reject: float = 0.5
    val_frac: float = 0.15
    split_mode: str = "patient"  # or "patch"
    balance: bool = True

    def validate(self) -> None:
        if self.split_mode not in ("patient", "patch"):
            raise ConfigError(f"split_mode must be 'patient' or 'patch', got {self.split_mode!r}")
        if not 0 <= self.val_frac < 1:
            raise ConfigError("val_frac must lie in [0, 1)")
        if self.tile < 1 or self.input_size < 1:
            raise ConfigError("tile and input_size must be positive")


@dataclass
class RoiPatchSet:
    images: np.ndarray  # uint8 (N, S, S, 3)
    labels: np.ndarray
    patient_ids: np.ndarray
    slide_ids: np.ndarray
    split: np.ndarray = None  # "train" / "val" per patch

    def __post_init__(self):
        if self.split is None:
            self.split = np.full(len(self.labels), "train", dtype=object)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "RoiPatchSet":
        index = np.asarray(index)
        return RoiPatchSet(self.images[index], self.labels[index], self.patient_ids[index],
                           self.slide_ids[index], self.split[index])

    def part(self, split: str) -> "RoiPatchSet":
        return self.subset(np.flatnonzero(self.split == split))

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


def tile_grid(region: PatchRef, tile: int) -> list[PatchRef]:
    """Non-overlapping ``tile``-sized windows inside ``region``, row-major; remainders dropped."""
    return [
        PatchRef(region.level, region.row + i * tile, region.col + j * tile, tile, tile)
        for i in range(region.height // tile)
        for j in range(region.width // tile)
    ]


def tile_region(img: PyramidImage, region: PatchRef, tile: int, out: int,
                white_reject: float = 0.5) -> np.ndarray:
    """Resized uint8 tiles of ``region`` whose whiteness is at most ``white_reject``."""
    kept = []
    for ref in tile_grid(region, tile):
        pixels = extract(img, ref)
        if whiteness(pixels) <= white_reject:
            kept.append(to_uint8(resize_bilinear(pixels, out)))
    if not kept:
        return np.zeros((0, out, out, 3), np.uint8)
    return np.stack(kept)


def tile_slide(img: PyramidImage, tile: int, out: int, white_reject: float = 0.5) -> np.ndarray:
    h, w = img.shape(img.top)
    return tile_region(img, PatchRef(img.top, 0, 0, h, w), tile, out, white_reject)


def _split(labels, patients, cfg: DownstreamConfig, rng) -> np.ndarray:
    split = np.full(len(labels), "train", dtype=object)
    if cfg.val_frac == 0:
        return split
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        if cfg.split_mode == "patch":
            n_val = int(round(cfg.val_frac * len(members)))
            split[rng.permutation(members)[:n_val]] = "val"
            continue
        ids = sorted(set(patients[members]))
        if len(ids) < 2:
            raise ConfigError(f"class {k} has {len(ids)} patient(s); a patient-disjoint split needs 2")
        n_val = min(max(1, int(round(cfg.val_frac * len(ids)))), len(ids) - 1)
        val_ids = set(rng.permutation(ids)[:n_val])
        split[[i for i in members if patients[i] in val_ids]] = "val"
    return split


def tile_rois(cohort, cfg: DownstreamConfig, seed: int = 0) -> RoiPatchSet:
    """Labelled training patches from every train-split patient's region of interest.

    Classes are balanced by subsampling to the smallest class, then split
    into train/val by patient (default) or by patch.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    images, labels, patients, slides = [], [], [], []
    for entry in cohort.by_split("train"):
        img = cohort.pyramid(entry)
        r, c, h, w = entry.roi if entry.roi else (0, 0, *img.shape(img.top))
        tiles = tile_region(img, PatchRef(img.top, r, c, h, w), cfg.tile, cfg.input_size,
                            cfg.white_reject)
        if len(tiles) == 0:
            raise EmptyRegion(f"region {entry.roi} of patient {entry.patient_id} has no tissue tiles")
        images.append(tiles)
        labels += [entry.class_id] * len(tiles)
        patients += [entry.patient_id] * len(tiles)
        slides += [entry.pyramid_path] * len(tiles)
    if not images:
        raise NoPatches("cohort has no train-split patients")
    labels = np.asarray(labels)
    patients, slides = np.asarray(patients, dtype=object), np.asarray(slides, dtype=object)
    keep = np.arange(len(labels))
    if cfg.balance:
        counts = np.bincount(labels)
        floor = counts[counts > 0].min()
        keep = np.sort(np.concatenate([
            rng.choice(np.flatnonzero(labels == k), floor, replace=False)
            for k in np.flatnonzero(counts)
        ]))
    patches = RoiPatchSet(np.concatenate(images)[keep], labels[keep], patients[keep], slides[keep])
    patches.split = _split(patches.labels, patches.patient_ids, cfg, rng)
    return patches


@dataclass
class HeldOutPatient:
    patient_id: str
    class_id: int
    images: np.ndarray


def tile_test_patients(cohort, cfg: DownstreamConfig) -> list[HeldOutPatient]:
    """Whole-slide tiles for every test-split patient."""
    out = []
    for entry in cohort.by_split("test"):
        tiles = tile_slide(cohort.pyramid(entry), cfg.tile, cfg.input_size, cfg.white_reject)
        if len(tiles) == 0:
            raise NoPatches(f"test patient {entry.patient_id} yields no tissue tiles")
        out.append(HeldOutPatient(entry.patient_id, entry.class_id, tiles))
    return out


# -- voting -----------------------------------------------------------------

@dataclass
class PatientPrediction:
    patient_id: str
    votes: np.ndarray
    final: int
    margin: int
    true: int = -1
    prob_mass: np.ndarray = field(default=None, repr=False)


def majority_vote(pred: np.ndarray, probs: np.ndarray | None, num_classes: int,
                  patient_id: str = "", true: int = -1) -> PatientPrediction:
    """Plurality over patch predictions.

    Ties go to the tied class with the larger summed softmax probability,
    then to the lowest class index. ``probs`` is either per-patch ``(N, K)``
    or already summed over patches ``(K,)``.
    """
    pred = np.asarray(pred, dtype=np.int64)
    if pred.size == 0:
        raise NoPatches(f"patient {patient_id!r} has no patches to vote")
    votes = np.bincount(pred, minlength=num_classes)
    if probs is None:
        mass = np.zeros(num_classes)
    else:
        probs = np.asarray(probs, dtype=float)
        mass = probs if probs.ndim == 1 else probs.sum(axis=0)
    tied = np.flatnonzero(votes == votes.max())
    best = max(tied, key=lambda k: (mass[k], -k))
    runner_up = np.sort(votes)[-2] if num_classes > 1 else 0
    return PatientPrediction(patient_id, votes, int(best), int(votes.max() - runner_up), true, mass)


def predict_patient(model, images: np.ndarray, patient_id: str = "", true: int = -1,
                    batch: int = 256) -> PatientPrediction:
    if len(images) == 0:
        raise NoPatches(f"patient {patient_id!r} has no patches")
    probs = model.predict_proba(images.astype(model.dtype) / np.asarray(255.0, model.dtype), batch)
    return majority_vote(probs.argmax(axis=1), probs, model.num_classes, patient_id, true)


def write_predictions(preds: list[PatientPrediction], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "true", "pred", "votes_per_class", "margin"])
        for p in preds:
            w.writerow([p.patient_id, p.true, p.final, ";".join(str(int(v)) for v in p.votes), p.margin])


# -- label fractions --------------------------------------------------------

def label_fraction_subset(patches: RoiPatchSet, fraction: float, seed: int = 0) -> RoiPatchSet:
    """Per-class random subsample keeping ``round(fraction * n_k)`` patches (at least one)."""
    if not 0 < fraction <= 1:
        raise FractionOutOfRange(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return patches.subset(np.arange(len(patches)))
    rng = np.random.default_rng(seed)
    keep = []
    for k in np.unique(patches.labels):
        members = np.flatnonzero(patches.labels == k)
        n = max(1, int(round(fraction * len(members))))
        keep.append(rng.choice(members, n, replace=False))
    return patches.subset(np.sort(np.concatenate(keep)))
