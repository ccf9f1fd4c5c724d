"""Writer for the feature-bank binary format.

Independent implementation of the format the ``structmatch`` reader
expects::

    magic b"DIML" | u16 version=1 | u16 reserved=0 | u32 N
    | u16 grid_h | u16 grid_w | u32 dim
    | N * grid_h * grid_w * dim little-endian float32, cell-major

plus a JSON sidecar ``<basename>.manifest.json`` holding a list of
``{"id": str, "label": int}`` in record order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"DIML"
VERSION = 1
_HEADER = struct.Struct("<4sHHIHHI")


def manifest_path(path: str | os.PathLike) -> Path:
    return Path(path).with_suffix(".manifest.json")


def _atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_bank(
    path: str | os.PathLike,
    ids: Sequence[str],
    labels: Sequence[int],
    features: np.ndarray,
) -> None:
    """Write ``features`` of shape (N, grid_h, grid_w, dim) plus manifest."""
    path = Path(path)
    feats = np.asarray(features)
    if feats.ndim != 4:
        raise ValueError(f"features must be (N, H, W, D), got shape {feats.shape}")
    n, grid_h, grid_w, dim = feats.shape
    if len(ids) != n or len(labels) != n:
        raise ValueError("ids, labels and features disagree on item count")
    if n < 1:
        raise ValueError("refusing to write an empty bank")
    if grid_h > 0xFFFF or grid_w > 0xFFFF:
        raise ValueError("grid dimensions exceed the u16 header fields")
    header = _HEADER.pack(MAGIC, VERSION, 0, n, grid_h, grid_w, dim)
    payload = np.ascontiguousarray(feats, dtype="<f4").tobytes()
    manifest = [{"id": str(i), "label": int(l)} for i, l in zip(ids, labels)]
    _atomic(path, header + payload)
    _atomic(manifest_path(path), json.dumps(manifest, indent=1).encode("utf-8"))
