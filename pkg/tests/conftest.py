"""Shared test helpers: seeded random builders for maps and galleries."""

import numpy as np
import pytest

from structmatch import FeatureMap, Gallery


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_map(rng, grid_h=2, grid_w=2, dim=4, scale=1.0):
    return FeatureMap(scale * rng.normal(size=(grid_h, grid_w, dim)))


def random_gallery(rng, n=12, classes=3, grid=2, dim=8, noise=0.3, prefix="item"):
    """Clustered gallery: per-class center plus Gaussian jitter."""
    centers = [rng.normal(size=(grid, grid, dim)) for _ in range(classes)]
    items = []
    for i in range(n):
        label = i % classes
        data = centers[label] + noise * rng.normal(size=(grid, grid, dim))
        items.append((f"{prefix}{i:03d}", label, FeatureMap(data)))
    return Gallery.from_items(items)


def random_simplex(rng, n):
    """Strictly positive random point on the probability simplex."""
    w = rng.uniform(0.05, 1.0, n)
    return w / w.sum()
