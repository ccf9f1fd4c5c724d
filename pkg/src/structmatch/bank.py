"""Binary feature-bank files.

Layout (all integers little-endian):

==========  =======  ==========================================
offset      type     meaning
==========  =======  ==========================================
0           4 bytes  magic ``b"DIML"``
4           u16      format version, currently 1
6           u16      reserved, written as 0
8           u32      item count N
12          u16      grid height
14          u16      grid width
16          u32      embedding dim D
20          f32[]    N records of ``grid_h * grid_w * D`` floats,
                     cell-major (row-major cells, dim fastest)
==========  =======  ==========================================

Ids and labels live in a JSON sidecar ``<basename>.manifest.json`` next to
the bank: a list of ``{"id": str, "label": int}`` in record order.  Payload
floats are stored exactly as float32, so write/read round-trips are
bit-identical at that precision.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .core import Gallery

__all__ = [
    "BankError",
    "BankMagicError",
    "BankVersionError",
    "BankTruncatedError",
    "BankManifestError",
    "manifest_path",
    "write_feature_bank",
    "read_feature_bank",
]

MAGIC = b"DIML"
VERSION = 1

_HEADER = struct.Struct("<4sHHIHHI")


class BankError(ValueError):
    """Base class for malformed feature banks."""


class BankMagicError(BankError):
    """File does not start with the bank magic."""


class BankVersionError(BankError):
    """Bank was written by an unsupported format version."""


class BankTruncatedError(BankError):
    """File ends before the declared payload does."""


class BankManifestError(BankError):
    """Sidecar manifest is missing, malformed or inconsistent."""


def manifest_path(path: str | os.PathLike) -> Path:
    """Path of the JSON sidecar for a bank file."""
    return Path(path).with_suffix(".manifest.json")


def _write_atomic(path: Path, data: bytes) -> None:
    # write-then-rename so readers never observe a half-written file
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_feature_bank(gallery: Gallery, path: str | os.PathLike) -> None:
    """Serialize a gallery to ``path`` plus its manifest sidecar."""
    path = Path(path)
    if gallery.grid_h > 0xFFFF or gallery.grid_w > 0xFFFF:
        raise ValueError("grid dimensions exceed the u16 header fields")
    header = _HEADER.pack(
        MAGIC, VERSION, 0, len(gallery), gallery.grid_h, gallery.grid_w, gallery.dim
    )
    payload = np.ascontiguousarray(gallery.features, dtype="<f4").tobytes()
    manifest = [
        {"id": gallery.ids[i], "label": int(gallery.labels[i])}
        for i in range(len(gallery))
    ]
    _write_atomic(path, header + payload)
    _write_atomic(
        manifest_path(path), json.dumps(manifest, indent=1).encode("utf-8")
    )


def read_feature_bank(path: str | os.PathLike) -> Gallery:
    """Load a bank and its manifest back into a :class:`Gallery`.

    Raises a specific :class:`BankError` subclass for each failure mode so
    callers can tell bad magic from a truncated payload from a manifest that
    disagrees with the header.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        if raw[: len(MAGIC)] != MAGIC[: len(raw)] or len(raw) < len(MAGIC):
            raise BankMagicError(f"{path}: not a feature bank (bad magic)")
        raise BankTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, _reserved, n, grid_h, grid_w, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BankMagicError(f"{path}: not a feature bank (bad magic {magic!r})")
    if version != VERSION:
        raise BankVersionError(f"{path}: unsupported bank version {version}")
    if n < 1 or grid_h < 1 or grid_w < 1 or dim < 1:
        raise BankError(f"{path}: degenerate header (N={n}, grid={grid_h}x{grid_w}, D={dim})")
    count = n * grid_h * grid_w * dim
    expected = _HEADER.size + 4 * count
    if len(raw) < expected:
        raise BankTruncatedError(
            f"{path}: payload truncated, expected {expected} bytes, have {len(raw)}"
        )
    feats = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size)
    feats = feats.reshape(n, grid_h, grid_w, dim).astype(np.float64)

    mpath = manifest_path(path)
    if not mpath.exists():
        raise BankManifestError(f"{mpath}: manifest sidecar missing")
    try:
        entries = json.loads(mpath.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise BankManifestError(f"{mpath}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list) or len(entries) != n:
        have = len(entries) if isinstance(entries, list) else type(entries).__name__
        raise BankManifestError(
            f"{mpath}: expected {n} manifest entries, got {have}"
        )
    ids, labels = [], []
    for rank, entry in enumerate(entries):
        if (
            not isinstance(entry, dict)
            or not isinstance(entry.get("id"), str)
            or not isinstance(entry.get("label"), int)
            or isinstance(entry.get("label"), bool)
            or entry["label"] < 0
        ):
            raise BankManifestError(f"{mpath}: bad entry at index {rank}: {entry!r}")
        ids.append(entry["id"])
        labels.append(entry["label"])
    if len(set(ids)) != n:
        raise BankManifestError(f"{mpath}: duplicate ids in manifest")
    return Gallery(tuple(ids), np.array(labels, dtype=np.int64), feats)
