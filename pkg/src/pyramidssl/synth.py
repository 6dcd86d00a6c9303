"""Deterministic synthetic pyramids and cohorts.

The top level is multi-octave band-limited noise in a class-specific palette
and spectrum. Global ramps make absolute position readable from local
appearance: colour shifts red-to-blue across the width and bright-to-dark
down the height, while the noise grows in contrast from left to right and
in per-channel share from top to bottom. Every lower level is the exact 2x2
mean of the level above, which makes patch localisation checkable by brute
force.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from ._parallel import ordered_map
from .errors import BudgetExceeded, ConfigError, FormatError, IoError
from .pyramid import PyramidImage, read_pyramid, write_pyramid

HUE_AXIS = np.array([1.0, 0.0, -1.0])
LUMA_AXIS = np.array([-1.0, -1.0, -1.0])
BACKGROUND = 0.95

# Stand-ins for the four RCC subtypes: clear cell, papillary, chromophobe, oncocytoma.
SUBTYPES = ("ccRCC", "pRCC", "chRCC", "ONCO")


@dataclass(frozen=True)
class ClassTexture:
    palette: tuple[float, float, float]
    wavelength: float  # gaussian sigma of the noise, in top-level pixels
    amplitude: float
    chroma: float = 0.3  # share of independent per-channel noise
    octaves: int = 1  # band spans wavelength * 2**k for k < octaves
    decay: float = 0.5  # amplitude ratio between successive octaves


DEFAULT_TEXTURES = (
    ClassTexture((0.66, 0.50, 0.62), wavelength=1.5, amplitude=0.12, octaves=5, decay=0.8),
    ClassTexture((0.56, 0.40, 0.58), wavelength=3.0, amplitude=0.12, octaves=5, decay=0.5),
    ClassTexture((0.62, 0.52, 0.52), wavelength=2.0, amplitude=0.10, octaves=5, decay=1.0),
    ClassTexture((0.68, 0.42, 0.50), wavelength=4.0, amplitude=0.10, octaves=5, decay=0.3),
)


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    levels: int = 4
    base_size: int = 128
    class_id: int = 0
    texture: ClassTexture = DEFAULT_TEXTURES[0]
    patient_id: str = "P000"
    hue_ramp: float = 0.15
    luminance_ramp: float = 0.15
    contrast_ramp: float = 0.8  # left-to-right texture amplitude change, as a fraction
    chroma_ramp: float = 0.6  # top-to-bottom change of the per-channel noise share
    patient_jitter: float = 0.02
    tissue_fraction: float = 0.9
    memory_budget_mb: float = 512.0

    @property
    def top_size(self) -> int:
        return self.base_size << (self.levels - 1)


def _check_budget(spec: SynthSpec) -> None:
    side = spec.top_size
    # every level in float64 plus scratch for the noise fields
    need_mb = side * side * 3 * 8 * (4 / 3 + 3) / 2**20
    if need_mb > spec.memory_budget_mb:
        raise BudgetExceeded(
            f"{spec.levels} levels with top {side}x{side} needs ~{need_mb:.0f} MB, "
            f"budget is {spec.memory_budget_mb:.0f} MB"
        )


def _unit_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    field_ = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return field_ / (field_.std() + 1e-12)


def _band_noise(rng: np.random.Generator, side: int, tex: ClassTexture) -> np.ndarray:
    """Unit-variance noise summed over octaves; coarse octaves render small and upsample."""
    total = np.zeros((side, side))
    for k in range(tex.octaves):
        res = max(side >> k, 4)
        layer = _unit_noise(rng, (res, res), tex.wavelength)
        if res != side:
            layer = zoom(layer, side / res, order=1, mode="grid-wrap", grid_mode=True)
        total += tex.decay ** k * layer
    return total / (total.std() + 1e-12)


def render_top(spec: SynthSpec) -> np.ndarray:
    """Highest-resolution raster of the pyramid described by ``spec``."""
    _check_budget(spec)
    rng = np.random.default_rng(spec.seed)
    side = spec.top_size
    tex = spec.texture

    palette = np.asarray(tex.palette) + rng.normal(0.0, spec.patient_jitter, 3)
    shared = _band_noise(rng, side, tex)[..., None]
    per_channel = np.stack([_band_noise(rng, side, tex) for _ in range(3)], -1)
    coords = (np.arange(side) + 0.5) / side - 0.5
    gain = 1.0 + spec.contrast_ramp * 2.0 * coords[None, :, None]
    chroma = np.clip(tex.chroma + spec.chroma_ramp * coords, 0.0, 1.0)[:, None, None]
    mix = ((1.0 - chroma) * shared + chroma * per_channel) / np.hypot(1.0 - chroma, chroma)
    noise = tex.amplitude * gain * mix
    ramp = (spec.hue_ramp * coords[None, :, None] * HUE_AXIS
            + spec.luminance_ramp * coords[:, None, None] * LUMA_AXIS)
    tissue = np.clip(palette + ramp + noise, 0.0, 0.8)

    # smooth field rendered at 1/8 resolution and upsampled
    coarse = max(side // 8, 1)
    blob = zoom(_unit_noise(rng, (coarse, coarse), coarse / 10.0), side / coarse, order=1,
                mode="grid-wrap", grid_mode=True)
    cut = np.quantile(blob, 1.0 - spec.tissue_fraction)
    is_tissue = (blob >= cut)[..., None]
    background = np.clip(BACKGROUND + 0.01 * rng.standard_normal((side, side, 1)), 0.0, 1.0)
    return np.where(is_tissue, tissue, background)


def pool2(arr: np.ndarray) -> np.ndarray:
    h, w, c = arr.shape
    return arr.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def generate_pyramid(spec: SynthSpec) -> PyramidImage:
    if spec.levels < 3:
        raise ConfigError(f"need at least 3 levels, got {spec.levels}")
    levels = [render_top(spec)]
    for _ in range(spec.levels - 1):
        levels.append(pool2(levels[-1]))
    return PyramidImage(levels[::-1])


# -- cohorts ----------------------------------------------------------------

@dataclass
class CohortConfig:
    num_classes: int = 4
    train_per_class: int | list[int] = 4
    test_per_class: int | list[int] = 5
    levels: int = 4
    base_size: int = 128
    hue_ramp: float = 0.15
    luminance_ramp: float = 0.15
    contrast_ramp: float = 0.8
    chroma_ramp: float = 0.6
    patient_jitter: float = 0.02
    tissue_fraction: float = 0.9
    roi_size: int = 512
    memory_budget_mb: float = 512.0
    textures: list[dict] | None = None

    def counts(self, which: str) -> list[int]:
        value = getattr(self, f"{which}_per_class")
        if isinstance(value, int):
            return [value] * self.num_classes
        return list(value)

    def class_textures(self) -> list[ClassTexture]:
        if self.textures is None:
            if self.num_classes > len(DEFAULT_TEXTURES):
                raise ConfigError(f"only {len(DEFAULT_TEXTURES)} default textures, "
                                  f"supply 'textures' for {self.num_classes} classes")
            return list(DEFAULT_TEXTURES[:self.num_classes])
        return [ClassTexture(**{**t, "palette": tuple(t["palette"])}) for t in self.textures]

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        for which in ("train", "test"):
            counts = self.counts(which)
            if len(counts) != self.num_classes:
                raise ConfigError(f"{which}_per_class lists {len(counts)} counts "
                                  f"for {self.num_classes} classes")
            if min(counts) < 1:
                raise ConfigError(f"every class needs at least one {which} patient, got {counts}")
        if len(self.class_textures()) != self.num_classes:
            raise ConfigError("one texture per class is required")
        if not 0 <= self.contrast_ramp < 1:
            raise ConfigError(f"contrast_ramp must lie in [0, 1), got {self.contrast_ramp}")
        if self.roi_size > self.base_size << (self.levels - 1):
            raise ConfigError("roi_size larger than the top level")


@dataclass
class PatientEntry:
    patient_id: str
    class_id: int
    split: str
    pyramid_path: str
    roi: list[int] = field(default_factory=list)  # [row, col, height, width] at the top level


@dataclass
class SynthCohort:
    root: Path
    patients: list[PatientEntry]

    def by_split(self, split: str) -> list[PatientEntry]:
        return [p for p in self.patients if p.split == split]

    def pyramid(self, entry: PatientEntry) -> PyramidImage:
        return read_pyramid(self.root / entry.pyramid_path)


def choose_roi(img: PyramidImage, size: int, stride: int | None = None) -> list[int]:
    """Square window at the top level with the most tissue (first one on ties)."""
    from .pyramid import background_mask

    top = img.levels[-1]
    stride = stride or max(size // 4, 1)
    tissue = ~background_mask(top)
    integral = np.pad(tissue.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    best, best_rc = -1, (0, 0)
    h, w = tissue.shape
    for r in range(0, h - size + 1, stride):
        for c in range(0, w - size + 1, stride):
            s = (integral[r + size, c + size] - integral[r, c + size]
                 - integral[r + size, c] + integral[r, c])
            if s > best:
                best, best_rc = s, (r, c)
    return [best_rc[0], best_rc[1], size, size]


def _make_patient(job, out: Path):
    spec, split, roi_size = job
    img = generate_pyramid(spec)
    rel = f"patients/{spec.patient_id}"
    write_pyramid(img, out / rel)
    return PatientEntry(spec.patient_id, spec.class_id, split, rel, choose_roi(img, roi_size))


def cohort_specs(config: CohortConfig, seed: int) -> list[tuple[SynthSpec, str, int]]:
    config.validate()
    textures = config.class_textures()
    jobs, index = [], 0
    for k in range(config.num_classes):
        for split in ("train", "test"):
            for _ in range(config.counts(split)[k]):
                spec = SynthSpec(
                    seed=seed ^ index, levels=config.levels, base_size=config.base_size,
                    class_id=k, texture=textures[k], patient_id=f"P{index:03d}",
                    hue_ramp=config.hue_ramp, luminance_ramp=config.luminance_ramp,
                    contrast_ramp=config.contrast_ramp, chroma_ramp=config.chroma_ramp,
                    patient_jitter=config.patient_jitter, tissue_fraction=config.tissue_fraction,
                    memory_budget_mb=config.memory_budget_mb,
                )
                jobs.append((spec, split, config.roi_size))
                index += 1
    return jobs


def generate_cohort(config: CohortConfig, out: str | os.PathLike, seed: int = 0,
                    threads: int = 1) -> SynthCohort:
    """Render every patient's pyramid under ``out`` and write ``cohort.json``.

    Patient ``i`` draws from the stream ``seed ^ i``, so the result does not
    depend on ``threads``.
    """
    out = Path(out)
    jobs = cohort_specs(config, seed)
    try:
        out.mkdir(parents=True, exist_ok=True)
        entries = ordered_map(partial(_make_patient, out=out), jobs, threads)
        (out / "cohort.json").write_text(json.dumps([asdict(e) for e in entries], indent=2))
        (out / "synth_config.json").write_text(json.dumps({"seed": seed, **asdict(config)}, indent=2))
    except OSError as exc:
        raise IoError(f"cannot write cohort to {out}: {exc}") from exc
    return SynthCohort(out, entries)


def read_cohort(path: str | os.PathLike) -> SynthCohort:
    root = Path(path)
    try:
        raw = json.loads((root / "cohort.json").read_text())
    except OSError as exc:
        raise IoError(f"cannot read {root}/cohort.json: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{root}/cohort.json is not valid JSON") from exc
    try:
        return SynthCohort(root, [PatientEntry(**entry) for entry in raw])
    except TypeError as exc:
        raise FormatError(f"malformed cohort entry: {exc}") from exc
