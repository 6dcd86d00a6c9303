"""``weights.bin`` / ``weights.json`` checkpoint files.

Binary layout (little-endian)::

    "WGTS"  u32 version  u32 tensor_count
    per tensor: u32 name_len, utf-8 name, u32 rank, u32 dims[rank], f32 data
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, IoError

MAGIC = b"WGTS"
VERSION = 1


def save_weights(tensors: dict[str, np.ndarray], directory: str | os.PathLike) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": VERSION, "tensors": []}
    try:
        with open(out / "weights.bin", "wb") as fh:
            fh.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
            for name, arr in tensors.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)) + raw)
                fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
                manifest["tensors"].append({"name": name, "shape": list(arr.shape)})
        (out / "weights.json").write_text(json.dumps(manifest, indent=2))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {out}: {exc}") from exc
    return out


def load_weights(directory: str | os.PathLike) -> dict[str, np.ndarray]:
    path = Path(directory) / "weights.bin"
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos, tensors = 12, {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", raw, pos)
            dims = struct.unpack_from(f"<{rank}I", raw, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if pos + size > len(raw):
                raise FormatError(f"{path}: tensor {name!r} truncated")
            tensors[name] = np.frombuffer(raw, dtype="<f4", count=size // 4, offset=pos).reshape(dims).copy()
            pos += size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated file") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return tensors
