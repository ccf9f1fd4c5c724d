"""Grid feature maps and galleries.

A feature map is an ``(H, W, D)`` array of part embeddings laid out on a
spatial grid.  Cells are always enumerated row-major (row 0 left to right,
then row 1, ...), and every consumer in this package relies on that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

__all__ = ["FeatureMap", "Gallery", "pool_grid", "gap"]


@dataclass(frozen=True)
class FeatureMap:
    """One image's grid of part embeddings, shape ``(grid_h, grid_w, dim)``.

    The backing array is copied to float64 and frozen; maps are value
    objects and never mutated in place.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"feature map must be 3-d (H, W, D), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"feature map axes must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature map contains non-finite values")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_cells(cls, cells: np.ndarray, grid_h: int, grid_w: int) -> "FeatureMap":
        """Build a map from ``(grid_h * grid_w, dim)`` row-major cell rows."""
        cells = np.asarray(cells, dtype=np.float64)
        if cells.ndim != 2 or cells.shape[0] != grid_h * grid_w:
            raise ValueError(
                f"expected {grid_h * grid_w} cell rows, got array of shape {cells.shape}"
            )
        return cls(cells.reshape(grid_h, grid_w, cells.shape[1]))

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def n_cells(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def cells(self) -> np.ndarray:
        """Row-major ``(n_cells, dim)`` view of the grid."""
        return self.data.reshape(self.n_cells, self.dim)


def _overlap_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic ``(n_out, n_in)`` matrix of interval-overlap fractions.

    Output bin ``i`` covers ``[i*s, (i+1)*s)`` with ``s = n_in / n_out`` in
    input-cell units; the weight on input cell ``r`` is the overlap with
    ``[r, r+1)`` divided by ``s``.  For ``n_out == n_in`` this is the
    identity, and when ``n_out`` divides ``n_in`` each row is a plain block
    mean, so pooling is exact rather than a point-sampled approximation.
    """
    if n_out < 1 or n_out > n_in:
        raise ValueError(f"target bins must be in [1, {n_in}], got {n_out}")
    s = n_in / n_out
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * s, (i + 1) * s
        r0, r1 = int(np.floor(lo)), int(np.ceil(hi))
        for r in range(r0, min(r1, n_in)):
            w[i, r] = max(0.0, min(hi, r + 1) - max(lo, r)) / s
    return w


def pool_grid(fmap: FeatureMap, target_g: int) -> FeatureMap:
    """Adaptively average-pool a map down to a ``target_g x target_g`` grid.

    Pooling is area-weighted: each output cell averages the input cells its
    bin overlaps, weighted by overlap fraction.  ``target_g`` equal to the
    input grid returns an identical map; ``target_g == 1`` collapses to the
    global mean.  Requires ``1 <= target_g <= min(grid_h, grid_w)``.
    """
    if target_g > min(fmap.grid_h, fmap.grid_w):
        raise ValueError(
            f"cannot pool {fmap.grid_h}x{fmap.grid_w} up to {target_g}x{target_g}"
        )
    if target_g == fmap.grid_h == fmap.grid_w:
        return fmap
    wh = _overlap_weights(fmap.grid_h, target_g)
    ww = _overlap_weights(fmap.grid_w, target_g)
    # (i,r)x(r,c,d)x(j,c) -> (i,j,d); optimize=False keeps summation order fixed
    pooled = np.einsum("ir,rcd,jc->ijd", wh, fmap.data, ww, optimize=False)
    return FeatureMap(pooled)


def gap(fmap: FeatureMap) -> np.ndarray:
    """Global average pooling: the mean embedding over all grid cells."""
    return fmap.cells.mean(axis=0)


@dataclass(frozen=True)
class Gallery:
    """An ordered collection of items with ids, integer labels and maps.

    All maps share one grid shape and embedding dimension; ``features`` is
    the stacked ``(N, grid_h, grid_w, dim)`` array in item order.
    """

    ids: tuple[str, ...]
    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = tuple(str(i) for i in self.ids)
        if feats.ndim != 4:
            raise ValueError(f"features must be (N, H, W, D), got shape {feats.shape}")
        n = feats.shape[0]
        if n < 1:
            raise ValueError("gallery must contain at least one item")
        if len(ids) != n or labels.shape != (n,):
            raise ValueError("ids, labels and features disagree on item count")
        if len(set(ids)) != n:
            raise ValueError("gallery ids must be unique")
        if labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if not np.all(np.isfinite(feats)):
            raise ValueError("gallery features contain non-finite values")
        feats = feats.copy()
        feats.flags.writeable = False
        labels = labels.copy()
        labels.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", feats)

    @classmethod
    def from_items(cls, items: Iterable[tuple[str, int, FeatureMap]]) -> "Gallery":
        items = list(items)
        if not items:
            raise ValueError("gallery must contain at least one item")
        ids = tuple(i for i, _, _ in items)
        labels = np.array([l for _, l, _ in items], dtype=np.int64)
        shapes = {fm.data.shape for _, _, fm in items}
        if len(shapes) != 1:
            raise ValueError(f"all maps must share one shape, got {sorted(shapes)}")
        feats = np.stack([fm.data for _, _, fm in items])
        return cls(ids, labels, feats)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[tuple[str, int, FeatureMap]]:
        for i in range(len(self)):
            yield self.item(i)

    def item(self, i: int) -> tuple[str, int, FeatureMap]:
        return self.ids[i], int(self.labels[i]), FeatureMap(self.features[i])

    def fmap(self, i: int) -> FeatureMap:
        return FeatureMap(self.features[i])

    def index_of(self, item_id: str) -> int:
        try:
            return self.ids.index(item_id)
        except ValueError:
            raise KeyError(f"no item with id {item_id!r}") from None

    @property
    def grid_h(self) -> int:
        return self.features.shape[1]

    @property
    def grid_w(self) -> int:
        return self.features.shape[2]

    @property
    def dim(self) -> int:
        return self.features.shape[3]
