"""Structural image similarity via entropy-regularized optimal transport.

Feature maps are compared cell-by-cell through a transport plan, giving a
similarity score that decomposes into inspectable part-wise contributions.
On top of that sit a two-stage retrieval pipeline (global cosine ranking
plus structural re-ranking of the head), standard retrieval metrics, and
forward values of structurally augmented metric-learning losses.
"""

__version__ = "0.1.0"

from .core import FeatureMap, Gallery, gap, pool_grid
from .bank import (
    BankError,
    BankMagicError,
    BankManifestError,
    BankTruncatedError,
    BankVersionError,
    manifest_path,
    read_feature_bank,
    write_feature_bank,
)
from .ot import (
    MarginalPair,
    SinkhornConfig,
    TransportPlan,
    exact_ot_oracle,
    sinkhorn,
    sinkhorn_batch,
    transport_cost,
)
from .matching import (
    MatchExplanation,
    PairContribution,
    cosine,
    cost_from_similarity,
    cross_correlation_marginals,
    explain_match,
    pairwise_cosine,
    part_embed,
    structural_distance,
    structural_similarity,
    uniform_marginals,
)
from .retrieval import (
    RankedEntry,
    RankedList,
    RetrievalConfig,
    batch_rerank,
    coarse_rank,
    rerank,
)
from .metrics import (
    LabeledRanking,
    MetricReport,
    evaluate,
    map_at_r,
    precision_at_k,
    r_precision,
)
from .losses import (
    MarginParams,
    MSParams,
    ProxyBank,
    margin_loss,
    ms_loss,
    proxy_nca_loss,
)

__all__ = [
    "__version__",
    "FeatureMap",
    "Gallery",
    "gap",
    "pool_grid",
    "BankError",
    "BankMagicError",
    "BankManifestError",
    "BankTruncatedError",
    "BankVersionError",
    "manifest_path",
    "read_feature_bank",
    "write_feature_bank",
    "MarginalPair",
    "SinkhornConfig",
    "TransportPlan",
    "exact_ot_oracle",
    "sinkhorn",
    "sinkhorn_batch",
    "transport_cost",
    "MatchExplanation",
    "PairContribution",
    "cosine",
    "cost_from_similarity",
    "cross_correlation_marginals",
    "explain_match",
    "pairwise_cosine",
    "part_embed",
    "structural_distance",
    "structural_similarity",
    "uniform_marginals",
    "RankedEntry",
    "RankedList",
    "RetrievalConfig",
    "batch_rerank",
    "coarse_rank",
    "rerank",
    "LabeledRanking",
    "MetricReport",
    "evaluate",
    "map_at_r",
    "precision_at_k",
    "r_precision",
    "MarginParams",
    "MSParams",
    "ProxyBank",
    "margin_loss",
    "ms_loss",
    "proxy_nca_loss",
]
