"""Structural similarity between feature maps.

Two maps are compared by transporting mass between their grid cells: cell
affinities define a cost matrix, per-cell importance defines the marginals,
and the entropic transport plan turns pairwise cell affinities into one
scalar.  Because the score is a sum of per-pair contributions, a match can
be decomposed and inspected pair by pair (:func:`explain_match`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import FeatureMap, gap
from .ot import MarginalPair, SinkhornConfig, TransportPlan, sinkhorn

__all__ = [
    "part_embed",
    "pairwise_cosine",
    "cost_from_similarity",
    "uniform_marginals",
    "cross_correlation_marginals",
    "structural_similarity",
    "structural_distance",
    "PairContribution",
    "MatchExplanation",
    "explain_match",
]


def part_embed(fmap: FeatureMap, projection: Optional[np.ndarray] = None) -> FeatureMap:
    """Project every cell through a ``(dim_out, dim_in)`` linear map.

    Models whose final embedding layer is linear can be applied per cell
    this way; with ``projection=None`` the map is returned unchanged
    (exported features may already live in the embedding space).
    """
    if projection is None:
        return fmap
    projection = np.asarray(projection, dtype=np.float64)
    if projection.ndim != 2 or projection.shape[1] != fmap.dim:
        raise ValueError(
            f"projection must be (dim_out, {fmap.dim}), got shape {projection.shape}"
        )
    cells = np.einsum("od,nd->no", projection, fmap.cells, optimize=False)
    return FeatureMap.from_cells(cells, fmap.grid_h, fmap.grid_w)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    # zero rows stay zero, so their cosine against anything is 0
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    return x / np.where(norms > 0.0, norms, 1.0)[:, None]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity with the convention ``cos(0, v) = 0``."""
    nu = float(np.sqrt(u @ u))
    nv = float(np.sqrt(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip((u @ v) / (nu * nv), -1.0, 1.0))


def pairwise_cosine(a: FeatureMap, b: FeatureMap) -> np.ndarray:
    """``(n_a, n_b)`` cosine similarities between all cell pairs, in [-1, 1]."""
    if a.dim != b.dim:
        raise ValueError(f"embedding dims differ: {a.dim} vs {b.dim}")
    sims = np.einsum(
        "id,jd->ij", _unit_rows(a.cells), _unit_rows(b.cells), optimize=False
    )
    return np.clip(sims, -1.0, 1.0)


def _pairwise_euclidean(a: FeatureMap, b: FeatureMap) -> np.ndarray:
    if a.dim != b.dim:
        raise ValueError(f"embedding dims differ: {a.dim} vs {b.dim}")
    diff = a.cells[:, None, :] - b.cells[None, :, :]
    return np.sqrt(np.einsum("ijd,ijd->ij", diff, diff, optimize=False))


def cost_from_similarity(sims: np.ndarray) -> np.ndarray:
    """Turn similarities in [-1, 1] into transport costs in [0, 2]."""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.size and (sims.min() < -1.0 or sims.max() > 1.0):
        raise ValueError("similarities must lie in [-1, 1]")
    return 1.0 - sims


def uniform_marginals(g: int) -> MarginalPair:
    """Equal weight ``1/g**2`` on every cell of a ``g x g`` grid, both sides."""
    if g < 1:
        raise ValueError(f"grid side must be >= 1, got {g}")
    return MarginalPair.uniform(g * g, g * g)


def cross_correlation_marginals(a: FeatureMap, b: FeatureMap) -> MarginalPair:
    """Cell weights from correlation against the other image's global mean.

    The weight vector for side ``a`` scores each of ``b``'s cells against
    ``a``'s mean embedding (and symmetrically for side ``b``): sliding one
    image's global feature over the other picks out the regions where the
    two images actually relate, down-weighting background.  Negative
    correlations are clamped to zero before normalizing; a side whose
    correlations are all non-positive falls back to uniform weights.  Both
    maps must share one grid shape so the index ranges line up.
    """
    if (a.grid_h, a.grid_w) != (b.grid_h, b.grid_w):
        raise ValueError(
            f"grids differ: {a.grid_h}x{a.grid_w} vs {b.grid_h}x{b.grid_w}"
        )
    weights = []
    for mean, cells in ((gap(a), b.cells), (gap(b), a.cells)):
        norm = float(np.sqrt(mean @ mean))
        unit = mean / norm if norm > 0.0 else mean
        alpha = np.clip(np.einsum("jd,d->j", _unit_rows(cells), unit), -1.0, 1.0)
        gamma = np.maximum(alpha, 0.0)
        total = gamma.sum()
        if total == 0.0:
            weights.append(np.full(gamma.size, 1.0 / gamma.size))
        else:
            weights.append(gamma / total)
    return MarginalPair(weights[0], weights[1])


def structural_similarity(
    a: FeatureMap,
    b: FeatureMap,
    config: SinkhornConfig = SinkhornConfig(),
    marginals: Optional[MarginalPair] = None,
) -> tuple[float, TransportPlan, np.ndarray]:
    """Transport-weighted total cosine similarity between two maps.

    Solves entropic transport with cost ``1 - cos`` and returns
    ``(score, plan, sims)`` where ``score = sum(sims * plan.plan)``.  With
    ``marginals=None`` the cross-correlation weights are used.
    """
    if marginals is None:
        marginals = cross_correlation_marginals(a, b)
    sims = pairwise_cosine(a, b)
    plan = sinkhorn(cost_from_similarity(sims), marginals, config)
    score = float(np.einsum("ij,ij->", sims, plan.plan, optimize=False))
    return score, plan, sims


def structural_distance(
    a: FeatureMap,
    b: FeatureMap,
    config: SinkhornConfig = SinkhornConfig(),
    marginals: Optional[MarginalPair] = None,
) -> tuple[float, TransportPlan, np.ndarray]:
    """Transport-weighted total Euclidean distance between two maps.

    The distance-flavoured twin of :func:`structural_similarity` for loss
    functions built on distances rather than similarities.
    """
    if marginals is None:
        marginals = cross_correlation_marginals(a, b)
    dists = _pairwise_euclidean(a, b)
    plan = sinkhorn(dists, marginals, config)
    value = float(np.einsum("ij,ij->", dists, plan.plan, optimize=False))
    return value, plan, dists


class PairContribution(NamedTuple):
    """One cell pair's share of a structural score."""

    i: int
    j: int
    flow: float  # rescaled flow; 1.0 means "as much as uniform transport"
    sim: float
    contribution: float  # flow * sim


@dataclass(frozen=True)
class MatchExplanation:
    """A structural comparison broken into inspectable pieces.

    ``rescaled_plan`` is the transport plan multiplied by ``n_cells**2`` so
    that uniform transport maps to 1.0 everywhere, which makes flows
    comparable across grid sizes.  ``top_pairs`` lists the cell pairs with
    the largest ``flow * sim`` products, ties broken by ``(i, j)``.
    """

    id_a: str
    id_b: str
    baseline_score: float
    structural_score: float
    marginal_s: np.ndarray
    marginal_t: np.ndarray
    rescaled_plan: np.ndarray
    top_pairs: tuple[PairContribution, ...]
    grid: int
    reg: float

    def to_json_dict(self) -> dict:
        return {
            "id_a": self.id_a,
            "id_b": self.id_b,
            "baseline_score": self.baseline_score,
            "structural_score": self.structural_score,
            "marginal_s": [float(x) for x in self.marginal_s],
            "marginal_t": [float(x) for x in self.marginal_t],
            "rescaled_plan": [[float(x) for x in row] for row in self.rescaled_plan],
            "top_pairs": [
                {
                    "i": p.i,
                    "j": p.j,
                    "flow": p.flow,
                    "sim": p.sim,
                    "contribution": p.contribution,
                }
                for p in self.top_pairs
            ],
            "grid": self.grid,
            "lambda": self.reg,
        }


def explain_match(
    a: FeatureMap,
    b: FeatureMap,
    config: SinkhornConfig = SinkhornConfig(),
    id_a: str = "a",
    id_b: str = "b",
    top_m: int = 5,
) -> MatchExplanation:
    """Compare two maps and decompose the structural score.

    Uses cross-correlation marginals, reports the plain cosine of the two
    mean embeddings as the baseline, and surfaces the ``top_m`` cell pairs
    by contribution.  Maps must share one square grid.
    """
    if a.grid_h != a.grid_w or a.data.shape[:2] != b.data.shape[:2]:
        raise ValueError("explanations require two maps on the same square grid")
    if top_m < 0:
        raise ValueError(f"top_m must be >= 0, got {top_m}")
    marginals = cross_correlation_marginals(a, b)
    score, plan, sims = structural_similarity(a, b, config, marginals)
    baseline = cosine(gap(a), gap(b))
    n = a.n_cells
    rescaled = plan.plan * float(n * n)
    contrib = rescaled * sims
    # sort by contribution desc, then (i, j) asc for a stable ordering
    flat = contrib.ravel()
    order = sorted(range(flat.size), key=lambda k: (-flat[k], k))
    pairs = tuple(
        PairContribution(
            k // n, k % n, float(rescaled.flat[k]), float(sims.flat[k]), float(flat[k])
        )
        for k in order[:top_m]
    )
    return MatchExplanation(
        id_a=id_a,
        id_b=id_b,
        baseline_score=baseline,
        structural_score=score,
        marginal_s=marginals.mu_s,
        marginal_t=marginals.mu_t,
        rescaled_plan=rescaled,
        top_pairs=pairs,
        grid=a.grid_h,
        reg=config.reg,
    )
