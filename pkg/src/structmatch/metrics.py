"""Retrieval accuracy metrics.

All metrics operate on a query's ranked candidate labels plus ``r_count``,
the number of same-class items present in the candidate pool.  Queries with
``r_count == 0`` have no retrievable positives, so aggregation skips them
rather than diluting the averages with undefined values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .retrieval import RankedList

__all__ = [
    "LabeledRanking",
    "MetricReport",
    "precision_at_k",
    "r_precision",
    "map_at_r",
    "evaluate",
]


@dataclass(frozen=True)
class LabeledRanking:
    """One query's ranking reduced to labels.

    ``retrieved`` holds candidate labels in rank order;  ``r_count`` is the
    number of candidates sharing ``query_label`` (it may exceed what any
    top-k window shows, but never ``len(retrieved)``).
    """

    query_label: int
    retrieved: tuple[int, ...]
    r_count: int

    def __post_init__(self):
        if self.r_count < 0 or self.r_count > len(self.retrieved):
            raise ValueError(
                f"r_count must be in [0, {len(self.retrieved)}], got {self.r_count}"
            )

    @classmethod
    def from_labels(cls, query_label: int, retrieved: Sequence[int]) -> "LabeledRanking":
        retrieved = tuple(int(l) for l in retrieved)
        return cls(int(query_label), retrieved, sum(l == query_label for l in retrieved))


def precision_at_k(ranking: LabeledRanking, k: int) -> float:
    """Fraction of the top ``k`` entries with the query's label."""
    if k < 1 or k > len(ranking.retrieved):
        raise ValueError(f"k must be in [1, {len(ranking.retrieved)}], got {k}")
    hits = sum(l == ranking.query_label for l in ranking.retrieved[:k])
    return hits / k


def r_precision(ranking: LabeledRanking) -> float:
    """Precision at the cutoff equal to the number of positives in the pool."""
    if ranking.r_count < 1:
        raise ValueError("r_precision is undefined when the pool has no positives")
    return precision_at_k(ranking, ranking.r_count)


def map_at_r(ranking: LabeledRanking) -> float:
    """Mean average precision over the first ``r_count`` ranks.

    Averages, over ``i = 1..r_count``, the precision at ``i`` when the
    ``i``-th entry is a hit and 0 when it is a miss.  Always at most
    :func:`r_precision` of the same ranking.
    """
    if ranking.r_count < 1:
        raise ValueError("map_at_r is undefined when the pool has no positives")
    total = 0.0
    hits = 0
    for i, label in enumerate(ranking.retrieved[: ranking.r_count], start=1):
        if label == ranking.query_label:
            hits += 1
            total += hits / i
    return total / ranking.r_count


@dataclass(frozen=True)
class MetricReport:
    """Mean metrics over the queries that had at least one positive."""

    p_at_1: float
    rp: float
    map_at_r: float
    queries: int

    def to_json_dict(self) -> dict:
        return {
            "p@1": self.p_at_1,
            "rp": self.rp,
            "map@r": self.map_at_r,
            "queries": self.queries,
        }


def evaluate(rankings: Sequence[RankedList], labels: Mapping[str, int]) -> MetricReport:
    """Score a batch of rankings against an id -> label mapping.

    Every query id and retrieved id must appear in ``labels``.  Queries
    whose candidate pool contains no same-label item are skipped; if that
    empties the batch there is nothing to average and a ValueError is
    raised.
    """
    p1s, rps, maps = [], [], []
    for ranking in rankings:
        try:
            qlabel = labels[ranking.query_id]
            retrieved = [labels[e.gallery_id] for e in ranking.entries]
        except KeyError as exc:
            raise ValueError(f"no label for id {exc.args[0]!r}") from None
        lr = LabeledRanking.from_labels(qlabel, retrieved)
        if lr.r_count == 0:
            continue
        p1s.append(precision_at_k(lr, 1))
        rps.append(r_precision(lr))
        maps.append(map_at_r(lr))
    if not p1s:
        raise ValueError("every query had an empty positive pool; nothing to score")
    return MetricReport(
        p_at_1=float(np.mean(p1s)),
        rp=float(np.mean(rps)),
        map_at_r=float(np.mean(maps)),
        queries=len(p1s),
    )
