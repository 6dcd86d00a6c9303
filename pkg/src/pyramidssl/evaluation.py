"""Patient-level metrics, repeated-run aggregation and the label-fraction ablation."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .downstream import (DownstreamConfig, RoiPatchSet, label_fraction_subset, predict_patient,
                         tile_rois, tile_test_patients)
from .errors import ConfigError, EmptyClass, ShapeMismatch
from .model import Classifier, EncoderSpec, transfer_encoder
from .train import DownstreamSchedule, train_downstream

log = logging.getLogger(__name__)

VARIANTS = ("location-ssl", "pair-ssl", "external-weights", "random-init")

# Mean class accuracies reported for the original cohort, for annotating reports only.
REFERENCE_ACCURACY = {"location-ssl": 76.5, "pair-ssl": 64.3, "imagenet": 69.8, "expertdt": 87.0}


def confusion_matrix(true, pred, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def mean_class_accuracy(cm) -> float:
    cm = np.asarray(cm, dtype=float)
    rows = cm.sum(axis=1)
    if (rows == 0).any():
        raise EmptyClass(f"classes {np.flatnonzero(rows == 0).tolist()} have no samples")
    return float(np.mean(np.diag(cm) / rows))


@dataclass
class RunSummary:
    mean_accuracy: float
    std_accuracy: float
    misclassified: int
    cell_mean: np.ndarray
    cell_std: np.ndarray
    per_run_accuracy: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "misclassified": self.misclassified,
            "cell_mean": self.cell_mean.tolist(),
            "cell_std": self.cell_std.tolist(),
            "per_run_accuracy": self.per_run_accuracy,
        }


def aggregate_runs(cms) -> RunSummary:
    """Cell-wise mean and sample std over runs; misclassified = ceil(mean off-diagonal total)."""
    mats = [np.asarray(c, dtype=float) for c in cms]
    if len(mats) < 2:
        raise ConfigError("aggregate_runs needs at least two runs")
    shapes = {m.shape for m in mats}
    if len(shapes) != 1 or len(mats[0].shape) != 2 or mats[0].shape[0] != mats[0].shape[1]:
        raise ShapeMismatch(f"confusion matrices must share one KxK shape, got {sorted(shapes)}")
    stack = np.stack(mats)
    accs = [mean_class_accuracy(c) for c in stack]
    off = stack.sum(axis=(1, 2)) - np.trace(stack, axis1=1, axis2=2)
    return RunSummary(
        mean_accuracy=float(np.mean(accs)),
        std_accuracy=float(np.std(accs, ddof=1)),
        misclassified=int(math.ceil(off.mean() - 1e-9)),
        cell_mean=stack.mean(axis=0),
        cell_std=stack.std(axis=0, ddof=1),
        per_run_accuracy=accs,
    )


def evaluate_patients(model: Classifier, patients) -> tuple[list, np.ndarray]:
    preds = [predict_patient(model, p.images, p.patient_id, p.class_id) for p in patients]
    cm = confusion_matrix([p.true for p in preds], [p.final for p in preds], model.num_classes)
    return preds, cm


# -- ablation ---------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    fraction: float
    run: int
    mean_acc: float


def make_classifier(variant: str, checkpoint, spec: EncoderSpec, num_classes: int,
                    seed: int) -> Classifier:
    if variant == "random-init":
        return Classifier(spec, num_classes, seed)
    if checkpoint is None:
        raise ConfigError(f"variant {variant!r} needs an encoder checkpoint")
    return transfer_encoder(checkpoint, num_classes, spec, seed)


def run_seed(seed: int, run: int) -> int:
    return int(np.random.SeedSequence([seed, run]).generate_state(1)[0])


def ablation(cohort, variants: dict, fractions=(0.33, 0.66, 1.0), runs: int = 5, seed: int = 0,
             schedule: DownstreamSchedule | None = None, tiling: DownstreamConfig | None = None,
             spec: EncoderSpec | None = None, patches: RoiPatchSet | None = None,
             held_out=None) -> tuple[list[AblationRow], dict]:
    """Fine-tune and evaluate every (variant, fraction, run) cell.

    ``variants`` maps a variant name to its encoder checkpoint (``None`` for
    random initialisation). Run ``r`` of every variant shares the subset and
    head-initialisation seed, so variants differ only in the encoder.
    Returns the rows and the confusion matrices keyed by (variant, fraction).
    """
    schedule = schedule or DownstreamSchedule()
    tiling = tiling or DownstreamConfig()
    spec = spec or EncoderSpec()
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise ConfigError(f"unknown ablation variants {sorted(unknown)}")
    patches = patches if patches is not None else tile_rois(cohort, tiling, seed)
    held_out = held_out if held_out is not None else tile_test_patients(cohort, tiling)
    num_classes = int(max(patches.labels.max(), max(p.class_id for p in held_out))) + 1
    train_all, val = patches.part("train"), patches.part("val")

    rows, cms = [], {}
    for variant, checkpoint in variants.items():
        for fraction in fractions:
            for run in range(runs):
                s = run_seed(seed, run)
                subset = label_fraction_subset(train_all, fraction, s)
                model = make_classifier(variant, checkpoint, spec, num_classes, s)
                train_downstream(model, subset.images, subset.labels, val.images, val.labels,
                                 schedule, seed=s)
                _, cm = evaluate_patients(model, held_out)
                acc = mean_class_accuracy(cm)
                log.info("%s fraction=%.2f run=%d mean_acc=%.3f", variant, fraction, run, acc)
                rows.append(AblationRow(variant, float(fraction), run, acc))
                cms.setdefault((variant, float(fraction)), []).append(cm)
    return rows, cms


def curve_table(rows: list[AblationRow]) -> list[dict]:
    """Mean and sample std of accuracy per (variant, fraction)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.variant, r.fraction), []).append(r.mean_acc)
    return [
        {"variant": v, "fraction": f, "mean_acc": float(np.mean(a)),
         "std_acc": float(np.std(a, ddof=1)) if len(a) > 1 else 0.0, "runs": len(a)}
        for (v, f), a in groups.items()
    ]


def write_ablation(rows: list[AblationRow], cms: dict, out: str | os.PathLike) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "fraction", "run", "mean_acc"])
        for r in rows:
            w.writerow([r.variant, f"{r.fraction:g}", r.run, f"{r.mean_acc:.6f}"])
    curve = curve_table(rows)
    summary = {"curve": curve, "runs": {}, "reference_accuracy_percent": REFERENCE_ACCURACY}
    for (variant, fraction), mats in cms.items():
        key = f"{variant}@{fraction:g}"
        if len(mats) >= 2:
            summary["runs"][key] = aggregate_runs(mats).to_json()
        else:
            summary["runs"][key] = {"confusion": mats[0].tolist(),
                                    "mean_accuracy": mean_class_accuracy(mats[0])}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    (out / "curve.svg").write_text(curve_svg(curve))


_COLORS = ("#1f77b4", "#2ca02c", "#ff7f0e", "#d62728", "#9467bd")


def curve_svg(curve: list[dict], width: int = 480, height: int = 320) -> str:
    """Accuracy versus training fraction, one line per variant with +-1 std bars."""
    pad = 48
    fx = lambda f: pad + (width - 2 * pad) * f  # noqa: E731
    fy = lambda a: height - pad - (height - 2 * pad) * a  # noqa: E731
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{fy(0)}" x2="{fx(1)}" y2="{fy(0)}" stroke="black"/>',
        f'<line x1="{pad}" y1="{fy(0)}" x2="{pad}" y2="{fy(1)}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">training fraction</text>',
        f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">mean class accuracy</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(f'<text x="{pad - 6}" y="{fy(tick) + 4:.1f}" text-anchor="end">{tick:g}</text>')
        parts.append(f'<text x="{fx(tick):.1f}" y="{fy(0) + 16}" text-anchor="middle">{tick:g}</text>')
    variants = list(dict.fromkeys(c["variant"] for c in curve))
    for i, v in enumerate(variants):
        color = _COLORS[i % len(_COLORS)]
        pts = sorted((c["fraction"], c["mean_acc"], c["std_acc"]) for c in curve if c["variant"] == v)
        path = " ".join(f"{fx(f):.1f},{fy(a):.1f}" for f, a, _ in pts)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for f, a, s in pts:
            parts.append(f'<line x1="{fx(f):.1f}" y1="{fy(max(a - s, 0)):.1f}" x2="{fx(f):.1f}" '
                         f'y2="{fy(min(a + s, 1)):.1f}" stroke="{color}"/>')
            parts.append(f'<circle cx="{fx(f):.1f}" cy="{fy(a):.1f}" r="3" fill="{color}"/>')
        parts.append(f'<text x="{fx(0) + 8}" y="{pad + 14 * i}" fill="{color}">{v}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
