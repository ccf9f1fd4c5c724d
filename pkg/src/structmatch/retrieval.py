"""Two-stage retrieval: cheap global ranking, structural re-ranking.

Stage one scores every candidate by the cosine of mean embeddings.  Stage
two re-scores only the ``top_k`` head of that ranking with the transport
based structural similarity on maps pooled to a small grid, then folds the
two scores together.  The tail keeps its stage-one ordering, so the output
is always a full ranking of the candidate set with the re-ranked head on
top.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import FeatureMap, Gallery, gap, pool_grid
from .ot import MarginalPair, SinkhornConfig, sinkhorn, sinkhorn_batch
from .matching import cost_from_similarity

__all__ = [
    "COMBINE_MODES",
    "MARGINAL_MODES",
    "RetrievalConfig",
    "RankedEntry",
    "RankedList",
    "coarse_rank",
    "rerank",
    "batch_rerank",
]

COMBINE_MODES = ("sum", "structural_only", "cosine_only")
MARGINAL_MODES = ("cc", "uniform")


@dataclass(frozen=True)
class RetrievalConfig:
    """Pipeline knobs.

    top_k
        How many head candidates get the structural treatment; 0 keeps the
        stage-one ranking untouched.
    grid
        Side of the square grid maps are pooled to before matching.
    combine
        ``sum`` adds cosine and structural scores, the ``*_only`` modes
        rank by a single score (``cosine_only`` skips stage two outright).
    marginals
        ``cc`` for cross-correlation weights, ``uniform`` for equal ones.
    """

    top_k: int = 100
    grid: int = 4
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    combine: str = "sum"
    marginals: str = "cc"

    def __post_init__(self):
        if self.top_k < 0:
            raise ValueError(f"top_k must be >= 0, got {self.top_k}")
        if self.grid < 1:
            raise ValueError(f"grid must be >= 1, got {self.grid}")
        if self.combine not in COMBINE_MODES:
            raise ValueError(f"combine must be one of {COMBINE_MODES}, got {self.combine!r}")
        if self.marginals == "cross_correlation":  # long-form alias
            object.__setattr__(self, "marginals", "cc")
        if self.marginals not in MARGINAL_MODES:
            raise ValueError(
                f"marginals must be one of {MARGINAL_MODES}, got {self.marginals!r}"
            )


@dataclass(frozen=True)
class RankedEntry:
    """One candidate in a ranking; ``structural`` is None outside the head."""

    gallery_id: str
    cosine: float
    structural: Optional[float]
    final: float


@dataclass(frozen=True)
class RankedList:
    """A full ranking for one query.

    ``stage2_count`` is how many leading entries were structurally
    re-scored; everything after them is ordered by stage-one cosine alone.
    """

    query_id: str
    entries: tuple[RankedEntry, ...]
    stage2_count: int

    def to_json_dict(self) -> dict:
        return {
            "query": self.query_id,
            "k": self.stage2_count,
            "entries": [
                {
                    "id": e.gallery_id,
                    "cosine": e.cosine,
                    "structural": e.structural,
                    "final": e.final,
                }
                for e in self.entries
            ],
        }


class _Prepared:
    """Gallery tensors shared by every query of a batch."""

    def __init__(self, gallery: Gallery, grid: int):
        g = min(grid, gallery.grid_h, gallery.grid_w)
        maps = [pool_grid(gallery.fmap(i), g) for i in range(len(gallery))]
        cells = np.stack([m.cells for m in maps])  # (N, n, D)
        self.cells_unit = _unit_cells(cells)
        pooled_gaps = cells.mean(axis=1)
        self.pooled_gaps_unit = _unit_cells(pooled_gaps[:, None, :])[:, 0, :]
        coarse_gaps = gallery.features.reshape(len(gallery), -1, gallery.dim).mean(axis=1)
        self.coarse_gaps_unit = _unit_cells(coarse_gaps[:, None, :])[:, 0, :]
        self.ids = np.asarray(gallery.ids)
        self.n_cells = cells.shape[1]


def _unit_cells(cells: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("...d,...d->...", cells, cells))
    return cells / np.where(norms > 0.0, norms, 1.0)[..., None]


def _cc_weights(cells_unit: np.ndarray, gap_unit: np.ndarray) -> np.ndarray:
    # relu'd correlations, normalized per row; all-clamped rows go uniform
    alpha = np.clip(np.einsum("kjd,kd->kj", cells_unit, gap_unit, optimize=False), -1.0, 1.0)
    gamma = np.maximum(alpha, 0.0)
    totals = gamma.sum(axis=1)
    flat = totals == 0.0
    totals[flat] = 1.0
    out = gamma / totals[:, None]
    out[flat] = 1.0 / gamma.shape[1]
    return out


def coarse_rank(query: FeatureMap, gallery: Gallery) -> list[tuple[str, float]]:
    """Full gallery ranking by cosine of mean embeddings, best first.

    Ties are broken by ascending id so rankings are reproducible.
    """
    prepared = _Prepared(gallery, grid=1)
    # same normalization arithmetic as the re-ranking path, so cosine_only
    # reproduces this ranking bit for bit
    qg = _unit_cells(gap(query)[None, None, :])[0, 0]
    cos = np.clip(
        np.einsum("nd,d->n", prepared.coarse_gaps_unit, qg, optimize=False), -1.0, 1.0
    )
    order = np.lexsort((prepared.ids, -cos))
    return [(str(prepared.ids[i]), float(cos[i])) for i in order]


def _rank_one(
    q_cells_unit: np.ndarray,
    q_pooled_gap_unit: np.ndarray,
    q_coarse_gap_unit: np.ndarray,
    query_id: str,
    prepared: _Prepared,
    config: RetrievalConfig,
    exclude: Optional[int],
) -> RankedList:
    cand = np.arange(prepared.ids.size)
    if exclude is not None:
        cand = cand[cand != exclude]
    cos = np.clip(
        np.einsum("nd,d->n", prepared.coarse_gaps_unit[cand], q_coarse_gap_unit,
                  optimize=False),
        -1.0,
        1.0,
    )
    order = np.lexsort((prepared.ids[cand], -cos))
    cand, cos = cand[order], cos[order]

    k_eff = 0 if config.combine == "cosine_only" else min(config.top_k, cand.size)
    entries: list[RankedEntry] = []
    if k_eff > 0:
        head = cand[:k_eff]
        cells = prepared.cells_unit[head]  # (k, n, D)
        sims = np.clip(
            np.einsum("id,kjd->kij", q_cells_unit, cells, optimize=False), -1.0, 1.0
        )
        costs = cost_from_similarity(sims)
        n = prepared.n_cells
        if config.marginals == "uniform":
            mu_s = np.full((k_eff, n), 1.0 / n)
            mu_t = np.full((k_eff, n), 1.0 / n)
        else:
            mu_s = _cc_weights(cells, np.broadcast_to(q_pooled_gap_unit, (k_eff, q_pooled_gap_unit.size)))
            mu_t = _cc_weights(
                np.broadcast_to(q_cells_unit, (k_eff,) + q_cells_unit.shape),
                prepared.pooled_gaps_unit[head],
            )
        if config.sinkhorn.log_domain:
            plans, _, _, _ = sinkhorn_batch(costs, mu_s, mu_t, config.sinkhorn)
        else:
            plans = np.stack(
                [
                    sinkhorn(costs[i], MarginalPair(mu_s[i], mu_t[i]), config.sinkhorn).plan
                    for i in range(k_eff)
                ]
            )
        struct = np.einsum("kij,kij->k", sims, plans, optimize=False)
        final = struct if config.combine == "structural_only" else cos[:k_eff] + struct
        reorder = np.lexsort((prepared.ids[head], -final))
        for r in reorder:
            entries.append(
                RankedEntry(
                    str(prepared.ids[head[r]]),
                    float(cos[r]),
                    float(struct[r]),
                    float(final[r]),
                )
            )
    for r in range(k_eff, cand.size):
        entries.append(RankedEntry(str(prepared.ids[cand[r]]), float(cos[r]), None, float(cos[r])))
    return RankedList(query_id, tuple(entries), k_eff)


def rerank(
    query: FeatureMap,
    gallery: Gallery,
    config: RetrievalConfig = RetrievalConfig(),
    query_id: str = "query",
) -> RankedList:
    """Rank a whole gallery against one query map."""
    prepared = _Prepared(gallery, config.grid)
    g = min(config.grid, query.grid_h, query.grid_w)
    pooled = pool_grid(query, g)
    if pooled.n_cells != prepared.n_cells:
        raise ValueError("query and gallery pool to different grids")
    q_cells_unit = _unit_cells(pooled.cells[None])[0]
    q_pooled_gap_unit = _unit_cells(pooled.cells.mean(axis=0)[None, None, :])[0, 0]
    q_coarse_gap_unit = _unit_cells(gap(query)[None, None, :])[0, 0]
    return _rank_one(
        q_cells_unit, q_pooled_gap_unit, q_coarse_gap_unit, query_id, prepared,
        config, exclude=None,
    )


def batch_rerank(
    queries: Gallery,
    gallery: Gallery,
    config: RetrievalConfig = RetrievalConfig(),
    threads: Optional[int] = None,
) -> list[RankedList]:
    """Rank the gallery against many queries, optionally in parallel.

    When ``queries`` and ``gallery`` are the same object the gallery
    queries itself and each item is excluded from its own candidate list.
    Results are assembled in query order and are identical for any thread
    count: all floating-point work happens in fixed-order reductions,
    never in a shared accumulator.
    """
    self_mode = queries is gallery
    prepared = _Prepared(gallery, config.grid)
    if not self_mode and queries.dim != gallery.dim:
        raise ValueError(
            f"query dim {queries.dim} does not match gallery dim {gallery.dim}"
        )
    qprep = prepared if self_mode else _Prepared(queries, config.grid)
    if qprep.n_cells != prepared.n_cells:
        raise ValueError("queries and gallery pool to different grids")

    def run(qi: int) -> RankedList:
        return _rank_one(
            qprep.cells_unit[qi],
            qprep.pooled_gaps_unit[qi],
            qprep.coarse_gaps_unit[qi],
            queries.ids[qi],
            prepared,
            config,
            exclude=qi if self_mode else None,
        )

    n_threads = threads if threads is not None else (os.cpu_count() or 1)
    if n_threads < 1:
        raise ValueError(f"threads must be >= 1, got {n_threads}")
    indices = range(len(queries))
    if n_threads == 1 or len(queries) == 1:
        return [run(qi) for qi in indices]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(run, indices))
