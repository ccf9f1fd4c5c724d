"""Forward values of structurally augmented metric-learning objectives.

Distance-based objectives replace their pair distance with the average of
the global (mean-embedding) distance and the transport-based structural
distance; similarity-based ones do the same with cosine and structural
similarity.  Only forward values are computed — these exist to validate an
external training implementation, not to drive one.

Training-path transport uses uniform marginals by default; pass
``marginals="cc"`` to weight cells by cross-correlation instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, log1p

import numpy as np
from scipy.special import logsumexp

from .core import FeatureMap, Gallery, gap
from .matching import (
    cosine,
    cross_correlation_marginals,
    structural_distance,
    structural_similarity,
)
from .ot import MarginalPair, SinkhornConfig

__all__ = [
    "MarginParams",
    "MSParams",
    "ProxyBank",
    "margin_loss",
    "ms_loss",
    "proxy_nca_loss",
]


@dataclass(frozen=True)
class MarginParams:
    """Hinge width and the learnable distance boundary."""

    margin: float
    boundary: float

    def __post_init__(self):
        if not (np.isfinite(self.margin) and np.isfinite(self.boundary)):
            raise ValueError("margin parameters must be finite")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")


@dataclass(frozen=True)
class MSParams:
    """Multi-similarity knobs.

    ``pos_scale``/``neg_scale`` temper the positive and negative soft
    maxima, ``base`` centres the similarities, and ``mining_margin`` is the
    slack in the pair-keeping gate.  The gate keeps a pair's similarity if
    it beats the weakest positive minus the slack or undercuts the hardest
    negative plus the slack, and zeroes it otherwise — with a positive
    slack nothing in-set is dropped, with zero or negative slack boundary
    pairs are.
    """

    pos_scale: float
    neg_scale: float
    base: float
    mining_margin: float

    def __post_init__(self):
        if not (self.pos_scale > 0 and self.neg_scale > 0):
            raise ValueError("pos_scale and neg_scale must be positive")
        for name in ("pos_scale", "neg_scale", "base", "mining_margin"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class ProxyBank:
    """One grid-shaped proxy map per class; its cell mean is the class proxy vector."""

    labels: tuple[int, ...]
    features: np.ndarray  # (C, grid_h, grid_w, dim)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = tuple(int(l) for l in self.labels)
        if feats.ndim != 4 or feats.shape[0] != len(labels):
            raise ValueError("need one (H, W, D) proxy map per label")
        if len(set(labels)) != len(labels):
            raise ValueError("proxy labels must be unique")
        if any(l < 0 for l in labels):
            raise ValueError("proxy labels must be non-negative")
        if not np.all(np.isfinite(feats)):
            raise ValueError("proxy features contain non-finite values")
        feats = feats.copy()
        feats.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", feats)

    @classmethod
    def from_items(cls, items) -> "ProxyBank":
        items = list(items)
        if not items:
            raise ValueError("proxy bank must not be empty")
        shapes = {fm.data.shape for _, fm in items}
        if len(shapes) != 1:
            raise ValueError(f"all proxies must share one shape, got {sorted(shapes)}")
        return cls(
            tuple(l for l, _ in items), np.stack([fm.data for _, fm in items])
        )

    def proxy(self, label: int) -> FeatureMap:
        try:
            return FeatureMap(self.features[self.labels.index(label)])
        except ValueError:
            raise KeyError(f"no proxy for label {label}") from None


def _marginals_for(a: FeatureMap, b: FeatureMap, mode: str):
    if mode == "uniform":
        return MarginalPair.uniform(a.n_cells, b.n_cells)
    if mode == "cc":
        return cross_correlation_marginals(a, b)
    raise ValueError(f"marginals must be 'uniform' or 'cc', got {mode!r}")


def _pair_distance(a, b, config, marginals) -> float:
    d_struct, _, _ = structural_distance(a, b, config, _marginals_for(a, b, marginals))
    diff = gap(a) - gap(b)
    return 0.5 * (d_struct + float(np.sqrt(diff @ diff)))


def _pair_similarity(a, b, config, marginals) -> float:
    s_struct, _, _ = structural_similarity(a, b, config, _marginals_for(a, b, marginals))
    return 0.5 * (cosine(gap(a), gap(b)) + s_struct)


def margin_loss(
    a: FeatureMap,
    b: FeatureMap,
    same_class: bool,
    params: MarginParams,
    config: SinkhornConfig = SinkhornConfig(),
    marginals: str = "uniform",
) -> float:
    """Hinge on the averaged distance: pull positives inside the boundary,
    push negatives outside, with ``margin`` of slack either way."""
    dist = _pair_distance(a, b, config, marginals)
    sign = 1.0 if same_class else -1.0
    return max(0.0, params.margin + sign * (dist - params.boundary))


def ms_loss(
    batch: Gallery,
    params: MSParams,
    config: SinkhornConfig = SinkhornConfig(),
    marginals: str = "uniform",
) -> float:
    """Batch-mean multi-similarity loss over all ordered pairs.

    Each anchor contributes a softplus over its gated positives and one
    over its gated negatives; anchors without positives (or negatives)
    simply contribute an empty, zero-valued term there.
    """
    n = len(batch)
    if n < 2:
        raise ValueError(f"need a batch of >= 2 items, got {n}")
    maps = [batch.fmap(i) for i in range(n)]
    labels = batch.labels
    sims = np.zeros((n, n))
    for k in range(n):
        for l in range(n):
            if l != k:
                sims[k, l] = _pair_similarity(maps[k], maps[l], config, marginals)

    total = 0.0
    for k in range(n):
        pos = [l for l in range(n) if l != k and labels[l] == labels[k]]
        neg = [l for l in range(n) if labels[l] != labels[k]]
        # empty sets make their condition unsatisfiable, not an error
        min_pos = min((sims[k, p] for p in pos), default=np.inf)
        max_neg = max((sims[k, m] for m in neg), default=-np.inf)

        def gate(s: float) -> float:
            if s > min_pos - params.mining_margin or s < max_neg + params.mining_margin:
                return s
            return 0.0

        pos_sum = sum(exp(-params.pos_scale * (gate(sims[k, p]) - params.base)) for p in pos)
        neg_sum = sum(exp(params.neg_scale * (gate(sims[k, m]) - params.base)) for m in neg)
        total += log1p(pos_sum) / params.pos_scale + log1p(neg_sum) / params.neg_scale
    return total / n


def proxy_nca_loss(
    batch: Gallery,
    proxies: ProxyBank,
    config: SinkhornConfig = SinkhornConfig(),
    marginals: str = "uniform",
) -> float:
    """Batch-mean proxy attraction/repulsion with averaged distances.

    Per item: ``d+ + log(sum_c exp(-d_c))`` where ``d+`` is the distance to
    the item's own class proxy and ``c`` ranges over the *other* proxy
    classes only.  Because the denominator omits the positive term, the
    value is not a true softmax cross-entropy and can be negative.
    """
    if len(set(proxies.labels)) < 2:
        raise ValueError("proxy bank needs at least two classes")
    n = len(batch)
    total = 0.0
    for k in range(n):
        _, label, fmap = batch.item(k)
        if label not in proxies.labels:
            raise ValueError(f"no proxy for batch label {label}")
        d_pos = _pair_distance(fmap, proxies.proxy(label), config, marginals)
        d_neg = [
            _pair_distance(fmap, proxies.proxy(c), config, marginals)
            for c in proxies.labels
            if c != label
        ]
        total += d_pos + float(logsumexp(-np.array(d_neg)))
    return total / n
