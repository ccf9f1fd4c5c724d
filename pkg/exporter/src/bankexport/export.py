"""Image-folder → feature-bank export.

The backbone runs up to its last convolutional stage; the resulting map is
pooled to a square grid with exact fractional-overlap windows (so the grid
average equals the backbone's own pooled embedding bit for bit, modulo
float32 storage) and each cell is optionally projected down to an
embedding dimension.
"""

from __future__ import annotations

import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}
BACKBONES = ("resnet18", "resnet34", "resnet50")

# the standard evaluation transform: resize the short side, center-crop,
# normalize with ImageNet statistics
_RESIZE, _CROP = 256, 224
_MEAN = [0.485, 0.456, 0.406]
_STD = [0.229, 0.224, 0.225]


class ExportError(RuntimeError):
    """Export could not produce a bank."""


@dataclass(frozen=True)
class ExportConfig:
    """What to export, through which backbone, to where.

    ``label_map`` is an optional JSON file mapping subdirectory name to an
    integer label; without it, sorted subdirectory order is enumerated.
    ``weights`` is an optional state-dict path; without it the backbone
    runs with its default random initialization (useful for format and
    pipeline tests, not for semantic retrieval).
    """

    image_root: Path
    out: Path
    label_map: Optional[Path] = None
    backbone: str = "resnet50"
    grid: int = 4
    dim: int = 128
    weights: Optional[Path] = None
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_root", Path(self.image_root))
        object.__setattr__(self, "out", Path(self.out))
        if self.label_map is not None:
            object.__setattr__(self, "label_map", Path(self.label_map))
        if self.weights is not None:
            object.__setattr__(self, "weights", Path(self.weights))
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.grid < 1:
            raise ValueError(f"grid must be >= 1, got {self.grid}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def _overlap_weights(n_in: int, n_out: int) -> np.ndarray:
    # row r covers input span [r*n_in/n_out, (r+1)*n_in/n_out); weight is
    # the fractional overlap, normalized so each row sums to 1 -- this
    # keeps the overall mean exactly
    w = np.zeros((n_out, n_in))
    for r in range(n_out):
        lo = r * n_in / n_out
        hi = (r + 1) * n_in / n_out
        for c in range(n_in):
            w[r, c] = max(0.0, min(hi, c + 1.0) - max(lo, float(c)))
    return w / (n_in / n_out)


def _pool_to_grid(maps: np.ndarray, g: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C, g, g) by exact-overlap average pooling."""
    _, _, h, w = maps.shape
    if g > min(h, w):
        raise ExportError(f"grid {g} exceeds the backbone map size {h}x{w}")
    wh = _overlap_weights(h, g)
    ww = _overlap_weights(w, g)
    return np.einsum("ir,bcrs,js->bcij", wh, maps, ww, optimize=True)


def _load_backbone(config: ExportConfig) -> tuple[torch.nn.Module, torch.nn.Linear]:
    ctor = getattr(models, config.backbone)
    # seed the fallback random initialization so equal configs give
    # byte-identical banks even without a weights file
    torch.manual_seed(config.seed)
    model = ctor(weights=None)
    if config.weights is not None:
        if not config.weights.exists():
            raise ExportError(f"weights file not found: {config.weights}")
        state = torch.load(config.weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model, model.fc


def _projection(config: ExportConfig, channels: int, fc: torch.nn.Linear):
    """Return (W, b, tag) mapping a cell of size ``channels`` to ``dim``."""
    if config.dim == channels:
        return None, None, "identity"
    if config.dim == fc.out_features:
        # the model's own final linear layer, applied per cell
        w = fc.weight.detach().numpy().astype(np.float64)
        b = fc.bias.detach().numpy().astype(np.float64)
        return w, b, "model_fc"
    rng = np.random.default_rng(config.seed)
    w = rng.normal(size=(config.dim, channels)) / np.sqrt(channels)
    return w, np.zeros(config.dim), f"gaussian(seed={config.seed})"


def _discover(config: ExportConfig) -> tuple[list[tuple[str, int, Path]], dict]:
    root = config.image_root
    if not root.is_dir():
        raise ExportError(f"image root is not a directory: {root}")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    if config.label_map is not None:
        mapping = json.loads(config.label_map.read_text("utf-8"))
        if not isinstance(mapping, dict):
            raise ExportError(f"label map must be a JSON object: {config.label_map}")
        labels = {name: int(v) for name, v in mapping.items()}
    else:
        labels = {d.name: i for i, d in enumerate(subdirs)}
    found = []
    for d in subdirs:
        if d.name not in labels:
            raise ExportError(f"no label for subdirectory {d.name!r}")
        for f in sorted(d.iterdir()):
            if f.suffix.lower() in IMAGE_SUFFIXES:
                found.append((f.relative_to(root).as_posix(), labels[d.name], f))
    return found, labels


def export(config: ExportConfig) -> int:
    """Run the backbone over the image tree and write the bank.

    Returns the number of exported items.  Unreadable images are skipped
    with a warning and excluded from the manifest; exporting zero items is
    an error.
    """
    found, label_table = _discover(config)
    transform = transforms.Compose([
        transforms.Resize(_RESIZE),
        transforms.CenterCrop(_CROP),
        transforms.ToTensor(),
        transforms.Normalize(mean=_MEAN, std=_STD),
    ])

    tensors, ids, labels, skipped = [], [], [], []
    for rel, label, path in found:
        try:
            with Image.open(path) as img:
                tensors.append(transform(img.convert("RGB")))
        except Exception as exc:  # PIL raises a zoo of decode errors
            warnings.warn(f"skipping unreadable image {path}: {exc}")
            skipped.append(rel)
            continue
        ids.append(rel)
        labels.append(label)
    if not tensors:
        raise ExportError(f"no readable images under {config.image_root}")

    model, fc = _load_backbone(config)
    # everything up to (not including) the model's own avgpool/fc head
    trunk = torch.nn.Sequential(*list(model.children())[:-2])

    maps = []
    with torch.no_grad():
        for i in range(0, len(tensors), config.batch_size):
            batch = torch.stack(tensors[i : i + config.batch_size])
            maps.append(trunk(batch).numpy().astype(np.float64))
    raw = np.concatenate(maps)  # (N, C, H, W)

    pooled = _pool_to_grid(raw, config.grid)  # (N, C, g, g)
    cells = np.transpose(pooled, (0, 2, 3, 1))  # (N, g, g, C)
    w, b, proj_tag = _projection(config, raw.shape[1], fc)
    if w is not None:
        cells = cells @ w.T + b

    from .bankio import manifest_path, write_bank

    write_bank(config.out, ids, labels, cells)
    meta = {
        "tool": "bankexport",
        "backbone": config.backbone,
        "weights": str(config.weights) if config.weights else None,
        "grid": config.grid,
        "dim": int(cells.shape[-1]),
        "projection": proj_tag,
        "transform": f"Resize({_RESIZE}) -> CenterCrop({_CROP}) -> ToTensor -> "
                     f"Normalize(mean={_MEAN}, std={_STD})",
        "labels": label_table,
        "skipped": skipped,
    }
    meta_path = config.out.with_suffix(".export.json")
    meta_path.write_text(json.dumps(meta, indent=1), "utf-8")
    print(
        f"exported {len(ids)} items ({len(skipped)} skipped) -> {config.out}",
        file=sys.stderr,
    )
    return len(ids)
