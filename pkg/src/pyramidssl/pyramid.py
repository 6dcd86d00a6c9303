"""Pyramidal images: data model, inter-level geometry, extraction and storage.

Level 0 is the coarsest level. Every level ``t + 1`` is exactly twice as wide
and twice as tall as level ``t``, so a window at level ``t`` maps onto a
window at level ``t + n`` by scaling its origin and size by ``2**n``.

Pixels live in memory as float arrays of shape ``(H, W, 3)`` with values in
``[0, 1]``. On disk each level is an 8-bit binary PPM next to a
``manifest.json``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError, LevelOutOfRange, OutOfBounds

LUMINANCE_THRESHOLD = 0.85
SATURATION_THRESHOLD = 0.05


@dataclass(frozen=True)
class PyramidMeta:
    levels: int
    base_width: int
    base_height: int
    channels: int = 3
    color_space: str = "rgb"


@dataclass(frozen=True)
class PatchRef:
    """A rectangular window at one pyramid level (origin is the top-left pixel)."""

    level: int
    row: int
    col: int
    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise OutOfBounds(f"window must have positive size, got {self.height}x{self.width}")
        if self.level < 0:
            raise LevelOutOfRange(f"negative level {self.level}")

    @property
    def bottom(self) -> int:
        return self.row + self.height

    @property
    def right(self) -> int:
        return self.col + self.width


@dataclass(frozen=True)
class TissueMask:
    level: int
    grid: np.ndarray
    tile_size: int


@dataclass
class PyramidImage:
    """Stack of rasters, index 0 = lowest resolution.

    The arrays are treated as read-only after construction.
    """

    levels: list[np.ndarray]
    meta: PyramidMeta = field(init=False)

    def __post_init__(self):
        if len(self.levels) < 3:
            raise FormatError(f"a pyramid needs at least 3 levels, got {len(self.levels)}")
        base = self.levels[0]
        if base.ndim != 3 or base.shape[2] != 3:
            raise FormatError(f"levels must be HxWx3 arrays, got shape {base.shape}")
        for t, arr in enumerate(self.levels):
            expected = (base.shape[0] << t, base.shape[1] << t, 3)
            if arr.shape != expected:
                raise FormatError(f"level {t} has shape {arr.shape}, expected {expected}")
            arr.flags.writeable = False
        self.meta = PyramidMeta(
            levels=len(self.levels), base_width=base.shape[1], base_height=base.shape[0]
        )

    @property
    def top(self) -> int:
        """Index of the highest-resolution level (N)."""
        return len(self.levels) - 1

    def shape(self, level: int) -> tuple[int, int]:
        self._check_level(level)
        h, w, _ = self.levels[level].shape
        return h, w

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.top:
            raise LevelOutOfRange(f"level {level} outside [0, {self.top}]")


def child_region(p: PatchRef, n: int, top: int | None = None) -> PatchRef:
    """Window at level ``p.level + n`` covering the same physical area as ``p``.

    ``top`` is the pyramid's highest level index; when given, levels beyond it
    raise :class:`LevelOutOfRange`.
    """
    if n < 0:
        raise LevelOutOfRange(f"zoom difference must be non-negative, got {n}")
    if top is not None and p.level + n > top:
        raise LevelOutOfRange(f"level {p.level} + {n} exceeds top level {top}")
    s = 1 << n
    return PatchRef(p.level + n, p.row * s, p.col * s, p.height * s, p.width * s)


def children_set(p_y: PatchRef, n: int, top: int | None = None) -> list[PatchRef]:
    """The ``4**n`` same-sized windows at level ``p_y.level + n`` tiling ``p_y``.

    Ordered row-major from the top-left, so the list index is the location
    label used by the pretext task.
    """
    region = child_region(p_y, n, top)
    side = 1 << n
    return [
        PatchRef(region.level, region.row + i * p_y.height, region.col + j * p_y.width,
                 p_y.height, p_y.width)
        for i in range(side)
        for j in range(side)
    ]


def check_inside(img: PyramidImage, p: PatchRef) -> None:
    img._check_level(p.level)
    h, w = img.shape(p.level)
    if p.row < 0 or p.col < 0 or p.bottom > h or p.right > w:
        raise OutOfBounds(f"{p} does not fit in level {p.level} of size {h}x{w}")


def extract(img: PyramidImage, p: PatchRef) -> np.ndarray:
    """Copy of the pixels under ``p`` as an ``(H, W, 3)`` array."""
    check_inside(img, p)
    return img.levels[p.level][p.row:p.bottom, p.col:p.right].copy()


def background_mask(pixels: np.ndarray, luminance_threshold: float = LUMINANCE_THRESHOLD,
                    saturation_threshold: float = SATURATION_THRESHOLD) -> np.ndarray:
    lo = pixels.min(axis=-1)
    spread = pixels.max(axis=-1) - lo
    return (lo > luminance_threshold) & (spread < saturation_threshold)


def whiteness(pixels: np.ndarray, luminance_threshold: float = LUMINANCE_THRESHOLD,
              saturation_threshold: float = SATURATION_THRESHOLD) -> float:
    """Fraction of pixels that are bright and unsaturated (slide background)."""
    pixels = np.asarray(pixels)
    if pixels.size == 0:
        raise ValueError("whiteness of an empty patch is undefined")
    return float(background_mask(pixels, luminance_threshold, saturation_threshold).mean())


def tissue_mask(img: PyramidImage, level: int, tile_size: int, white_reject: float = 0.5,
                **thresholds) -> TissueMask:
    """Per-tile tissue flags; partial tiles at the border are measured as-is."""
    img._check_level(level)
    bg = background_mask(img.levels[level], **thresholds)
    h, w = bg.shape
    gh, gw = math.ceil(h / tile_size), math.ceil(w / tile_size)
    grid = np.zeros((gh, gw), dtype=bool)
    for i in range(gh):
        for j in range(gw):
            block = bg[i * tile_size:(i + 1) * tile_size, j * tile_size:(j + 1) * tile_size]
            grid[i, j] = block.mean() <= white_reject
    return TissueMask(level, grid, tile_size)


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Snap values onto the 8-bit grid used by the file format."""
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0) / 255.0


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(buf: np.ndarray) -> np.ndarray:
    return buf.astype(np.float64) / 255.0


# -- PPM (P6, maxval 255) ---------------------------------------------------

def write_ppm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    data = to_uint8(pixels) if pixels.dtype != np.uint8 else pixels
    h, w, c = data.shape
    if c != 3:
        raise FormatError(f"PPM needs 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def _ppm_tokens(raw: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PPM as a ``uint8`` array of shape ``(H, W, 3)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    tokens, offset = _ppm_tokens(raw, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = raw[offset:offset + w * h * 3]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pyramid(img: PyramidImage, path: str | os.PathLike) -> Path:
    """Write ``manifest.json`` and ``level_<t>.ppm`` files into directory ``path``.

    Values are stored as 8-bit; pyramids already on the 1/255 grid round-trip
    bit-exactly.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "levels": img.meta.levels,
            "base_width": img.meta.base_width,
            "base_height": img.meta.base_height,
            "channels": img.meta.channels,
            "format": "ppm",
            "level_sizes": [[arr.shape[1], arr.shape[0]] for arr in img.levels],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        for t, arr in enumerate(img.levels):
            write_ppm(out / f"level_{t}.ppm", arr)
    except OSError as exc:
        raise IoError(f"cannot write pyramid to {out}: {exc}") from exc
    return out


def read_pyramid(path: str | os.PathLike) -> PyramidImage:
    src = Path(path)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest in {src}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{src}/manifest.json is not valid JSON") from exc

    required = ("levels", "base_width", "base_height", "channels", "format")
    missing = [k for k in required if k not in manifest]
    if missing:
        raise FormatError(f"manifest missing fields {missing}")
    if manifest["format"] != "ppm" or manifest["channels"] != 3:
        raise FormatError(f"unsupported format {manifest['format']!r}/{manifest['channels']} channels")
    n_levels, bw, bh = manifest["levels"], manifest["base_width"], manifest["base_height"]
    if not (isinstance(n_levels, int) and n_levels >= 3 and bw > 0 and bh > 0):
        raise FormatError(f"bad manifest geometry {manifest}")
    sizes = manifest.get("level_sizes")
    if sizes is not None:
        expected = [[bw << t, bh << t] for t in range(n_levels)]
        if [list(s) for s in sizes] != expected:
            raise FormatError(f"level_sizes {sizes} break the x2 rule, expected {expected}")

    levels = []
    for t in range(n_levels):
        f = src / f"level_{t}.ppm"
        if not f.exists():
            raise IoError(f"missing level file {f}")
        buf = read_ppm(f)
        if buf.shape[:2] != (bh << t, bw << t):
            raise FormatError(
                f"level {t} is {buf.shape[1]}x{buf.shape[0]}, manifest implies {bw << t}x{bh << t}"
            )
        levels.append(from_uint8(buf))
    return PyramidImage(levels)
