"""
Structure-aware training losses
===============================

The margin, multi-similarity and proxy losses all run on the averaged
distance/similarity: half global, half transport-based.  When two items
share parts but not layout, the structural half sees it and the loss
drops; plain pooling never would.
"""

import numpy as np

from structmatch import (
    FeatureMap,
    Gallery,
    MarginParams,
    MSParams,
    ProxyBank,
    SinkhornConfig,
    margin_loss,
    ms_loss,
    proxy_nca_loss,
)

rng = np.random.default_rng(13)
cfg = SinkhornConfig(reg=0.05, max_iters=2000, tol=1e-8)

parts = np.eye(4)
anchor = FeatureMap(parts.reshape(2, 2, 4))
# same parts, different cells
rearranged = FeatureMap(parts[[2, 0, 3, 1]].reshape(2, 2, 4))
# no parts, just the average everywhere
smeared = FeatureMap(np.tile(parts.mean(axis=0), (2, 2, 1)))

# The loss runs on the averaged distance: half pooled-euclidean, half
# transport.  All three maps share one average, so pooling alone calls
# every pair a perfect match -- only the structural half differs.
def avg_distance(a, b):
    from structmatch import gap, structural_distance
    from structmatch.matching import uniform_marginals
    d_struct, _, _ = structural_distance(a, b, cfg, uniform_marginals(2))
    return 0.5 * (d_struct + float(np.linalg.norm(gap(a) - gap(b))))

print("avg distance, anchor vs rearranged:", round(avg_distance(anchor, rearranged), 4))
print("avg distance, anchor vs smeared:   ", round(avg_distance(anchor, smeared), 4))

mp = MarginParams(margin=0.1, boundary=0.2)
print("\nmargin loss, anchor vs rearranged (positive):",
      round(margin_loss(anchor, rearranged, True, mp, cfg), 4))
print("margin loss, anchor vs smeared    (positive):",
      round(margin_loss(anchor, smeared, True, mp, cfg), 4))
# The rearranged positive is nearly free to pull in: transport already
# matched its parts.  The smeared one still pays.

# A batch mixing two classes, each with aligned and shuffled members.
def jitter(cells):
    return FeatureMap(cells + 0.05 * rng.normal(size=cells.shape))

other = np.stack([parts[1], parts[0], -parts[2], -parts[3]])
batch = Gallery.from_items([
    ("a0", 0, jitter(parts.reshape(2, 2, 4))),
    ("a1", 0, jitter(parts[[1, 0, 3, 2]].reshape(2, 2, 4))),
    ("b0", 1, jitter(other.reshape(2, 2, 4))),
    ("b1", 1, jitter(other[[3, 2, 1, 0]].reshape(2, 2, 4))),
])

ms = MSParams(pos_scale=2.0, neg_scale=50.0, base=1.0, mining_margin=0.1)
print("\nmulti-similarity loss on the batch:", round(ms_loss(batch, ms, cfg), 4))

# Proxies are just 1-item-per-class reference maps.
proxies = ProxyBank.from_items([
    (0, FeatureMap(parts.reshape(2, 2, 4))),
    (1, FeatureMap(other.reshape(2, 2, 4))),
])
print("proxy loss on the batch:           ", round(proxy_nca_loss(batch, proxies, cfg), 4))

# Collapse the maps to 1x1 and the smeared impostor becomes invisible:
# on averages alone its margin loss is the floor value, as if it were a
# perfectly placed positive.
flat = lambda fm: FeatureMap(fm.cells.mean(axis=0).reshape(1, 1, -1))
print("\nsmeared positive, 2x2 grid:", round(margin_loss(anchor, smeared, True, mp, cfg), 4))
print("smeared positive, GAP only:", round(margin_loss(flat(anchor), flat(smeared), True, mp, cfg), 4))
