"""Structurally augmented loss values vs hand math and reference formulas."""

import math

import numpy as np
import pytest

from structmatch import (
    FeatureMap,
    Gallery,
    MarginalPair,
    MarginParams,
    MSParams,
    ProxyBank,
    SinkhornConfig,
    cosine,
    gap,
    margin_loss,
    ms_loss,
    proxy_nca_loss,
    structural_distance,
    structural_similarity,
)

from conftest import random_map

MS = MSParams(pos_scale=2.0, neg_scale=50.0, base=1.0, mining_margin=0.1)


def _point(value, dim=1):
    """G=1 map holding a single cell."""
    cell = np.full(dim, float(value)) if np.isscalar(value) else np.asarray(value, float)
    return FeatureMap(cell[None, None, :])


def _augmented_similarity(a, b, config):
    s_struct, _, _ = structural_similarity(
        a, b, config, MarginalPair.uniform(a.n_cells, b.n_cells))
    return 0.5 * (cosine(gap(a), gap(b)) + s_struct)


def _augmented_distance(a, b, config):
    d_struct, _, _ = structural_distance(
        a, b, config, MarginalPair.uniform(a.n_cells, b.n_cells))
    return 0.5 * (float(np.linalg.norm(gap(a) - gap(b))) + d_struct)


def _ms_reference(batch, params, config):
    """Straight-line evaluation of the multi-similarity formula."""
    n = len(batch)
    labels = batch.labels
    s = np.zeros((n, n))
    for k in range(n):
        for l in range(n):
            if k != l:
                s[k, l] = _augmented_similarity(batch.fmap(k), batch.fmap(l), config)
    total = 0.0
    for k in range(n):
        pos = [l for l in range(n) if l != k and labels[l] == labels[k]]
        neg = [l for l in range(n) if labels[l] != labels[k]]
        min_pos = min((s[k, p] for p in pos), default=math.inf)
        max_neg = max((s[k, m] for m in neg), default=-math.inf)
        star = lambda x: x if (x > min_pos - params.mining_margin
                               or x < max_neg + params.mining_margin) else 0.0
        pos_sum = sum(math.exp(-params.pos_scale * (star(s[k, p]) - params.base))
                      for p in pos)
        neg_sum = sum(math.exp(params.neg_scale * (star(s[k, m]) - params.base))
                      for m in neg)
        total += math.log(1.0 + pos_sum) / params.pos_scale
        total += math.log(1.0 + neg_sum) / params.neg_scale
    return total / n


def _proxy_reference(batch, proxies, config):
    total = 0.0
    for k in range(len(batch)):
        label = int(batch.labels[k])
        fmap = batch.fmap(k)
        d_pos = _augmented_distance(fmap, proxies.proxy(label), config)
        d_neg = [_augmented_distance(fmap, proxies.proxy(c), config)
                 for c in proxies.labels if c != label]
        total += d_pos + math.log(sum(math.exp(-d) for d in d_neg))
    return total / len(batch)


class TestMarginLoss:
    def test_identical_positive_pair(self, rng):
        fm = random_map(rng, 2, 2, 4)
        params = MarginParams(margin=2.0, boundary=1.2)
        assert margin_loss(fm, fm, True, params) == pytest.approx(0.8, abs=1e-9)
        clipped = MarginParams(margin=0.1, boundary=1.2)
        assert margin_loss(fm, fm, True, clipped) == 0.0

    def test_boundary_distance_gives_margin(self):
        a, b = _point(0.0), _point(1.2)
        params = MarginParams(margin=0.1, boundary=1.2)
        assert margin_loss(a, b, True, params) == pytest.approx(0.1, abs=1e-9)
        assert margin_loss(a, b, False, params) == pytest.approx(0.1, abs=1e-9)

    def test_easy_negative_is_free(self):
        a, b = _point(0.0), _point(3.0)
        params = MarginParams(margin=0.1, boundary=1.2)
        assert margin_loss(a, b, False, params) == 0.0

    def test_nonnegative(self, rng):
        params = MarginParams(margin=0.2, boundary=1.0)
        for _ in range(10):
            a, b = random_map(rng, 2, 2, 3), random_map(rng, 2, 2, 3)
            same = bool(rng.integers(0, 2))
            assert margin_loss(a, b, same, params) >= 0.0

    def test_translation_invariance(self, rng):
        a, b = random_map(rng, 2, 2, 4), random_map(rng, 2, 2, 4)
        shift = rng.normal(size=4)
        a2 = FeatureMap(a.data + shift)
        b2 = FeatureMap(b.data + shift)
        params = MarginParams(margin=0.5, boundary=1.0)
        assert margin_loss(a, b, False, params) == pytest.approx(
            margin_loss(a2, b2, False, params), abs=1e-9)

    def test_reduces_to_classic_hinge_at_g1(self, rng):
        params = MarginParams(margin=0.3, boundary=0.9)
        for _ in range(10):
            a, b = random_map(rng, 1, 1, 5), random_map(rng, 1, 1, 5)
            same = bool(rng.integers(0, 2))
            d = float(np.linalg.norm(gap(a) - gap(b)))
            sign = 1.0 if same else -1.0
            classic = max(0.0, params.margin + sign * (d - params.boundary))
            assert margin_loss(a, b, same, params) == pytest.approx(classic, abs=1e-9)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            MarginParams(margin=-0.1, boundary=1.0)
        with pytest.raises(ValueError):
            MarginParams(margin=0.1, boundary=np.nan)


class TestMSLoss:
    def test_identical_pair_hand_value(self):
        fm = _point([1.0, 0.0])
        batch = Gallery.from_items([("a", 0, fm), ("b", 0, fm)])
        # one positive pair per anchor at s=1, gate passes, no negatives
        per_anchor = math.log1p(math.exp(-MS.pos_scale * (1.0 - MS.base))) / MS.pos_scale
        assert ms_loss(batch, MS) == pytest.approx(per_anchor, abs=1e-9)

    def test_no_positives_leaves_negative_term(self):
        a, b = _point([1.0, 0.0]), _point([0.0, 1.0])
        batch = Gallery.from_items([("a", 0, a), ("b", 1, b)])
        got = ms_loss(batch, MS)
        s = 0.0  # orthogonal cells: cosine 0, structural 0
        want = math.log1p(math.exp(MS.neg_scale * (s - MS.base))) / MS.neg_scale
        assert got == pytest.approx(want, abs=1e-9)

    def test_zero_slack_gates_boundary_pairs(self):
        fm = _point([1.0, 0.0])
        batch = Gallery.from_items([("a", 0, fm), ("b", 0, fm)])
        strict = MSParams(pos_scale=2.0, neg_scale=50.0, base=1.0,
                          mining_margin=0.0)
        # the only positive IS the weakest positive; with zero slack the
        # gate fails and its similarity is replaced by 0
        per_anchor = math.log1p(math.exp(-2.0 * (0.0 - 1.0))) / 2.0
        assert ms_loss(batch, strict) == pytest.approx(per_anchor, abs=1e-9)

    def test_matches_reference_on_mixed_batch(self, rng):
        items = [(f"i{k}", k % 2, random_map(rng, 2, 2, 4)) for k in range(4)]
        batch = Gallery.from_items(items)
        cfg = SinkhornConfig()
        assert ms_loss(batch, MS, cfg) == pytest.approx(
            _ms_reference(batch, MS, cfg), abs=1e-9)

    def test_matches_reference_with_negative_slack(self, rng):
        items = [(f"i{k}", k % 3, random_map(rng, 2, 2, 4)) for k in range(5)]
        batch = Gallery.from_items(items)
        params = MSParams(pos_scale=2.0, neg_scale=40.0, base=0.5,
                          mining_margin=-0.05)
        cfg = SinkhornConfig()
        assert ms_loss(batch, params, cfg) == pytest.approx(
            _ms_reference(batch, params, cfg), abs=1e-9)

    def test_better_structure_lowers_loss(self):
        e = np.eye(4)
        anchor = FeatureMap(e.reshape(2, 2, 4))
        blurred = FeatureMap(np.broadcast_to(e.sum(axis=0) / 2.0, (2, 2, 4)).copy())
        cfg = SinkhornConfig(reg=0.01, max_iters=2000, tol=1e-9)
        sharp_batch = Gallery.from_items([("a", 0, anchor), ("b", 0, anchor)])
        blurred_batch = Gallery.from_items([("a", 0, anchor), ("b", 0, blurred)])
        # global cosine is 1 in both batches; only structure differs
        assert ms_loss(sharp_batch, MS, cfg) < ms_loss(blurred_batch, MS, cfg)

    def test_single_item_batch_rejected(self, rng):
        batch = Gallery.from_items([("only", 0, random_map(rng))])
        with pytest.raises(ValueError):
            ms_loss(batch, MS)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            MSParams(pos_scale=0.0, neg_scale=1.0, base=0.0, mining_margin=0.1)
        with pytest.raises(ValueError):
            MSParams(pos_scale=1.0, neg_scale=-2.0, base=0.0, mining_margin=0.1)


class TestProxyNCALoss:
    def test_item_on_own_proxy(self):
        own = _point([0.0, 0.0])
        other = _point([3.0, 4.0])  # Euclid distance 5 from the item
        proxies = ProxyBank.from_items([(0, own), (1, other)])
        batch = Gallery.from_items([("x", 0, own)])
        assert proxy_nca_loss(batch, proxies) == pytest.approx(-5.0, abs=1e-9)

    def test_equidistant_proxies_cancel(self):
        item = _point([0.0, 0.0])
        proxies = ProxyBank.from_items([(0, _point([1.0, 0.0])),
                                        (1, _point([-1.0, 0.0]))])
        batch = Gallery.from_items([("x", 0, item)])
        assert proxy_nca_loss(batch, proxies) == pytest.approx(0.0, abs=1e-9)

    def test_matches_reference_three_classes(self, rng):
        proxies = ProxyBank.from_items(
            [(c, random_map(rng, 2, 2, 4)) for c in range(3)])
        items = [(f"i{k}", k % 3, random_map(rng, 2, 2, 4)) for k in range(6)]
        batch = Gallery.from_items(items)
        cfg = SinkhornConfig()
        assert proxy_nca_loss(batch, proxies, cfg) == pytest.approx(
            _proxy_reference(batch, proxies, cfg), abs=1e-9)

    def test_reduces_to_classic_at_g1(self, rng):
        proxies = ProxyBank.from_items(
            [(c, random_map(rng, 1, 1, 4)) for c in range(3)])
        batch = Gallery.from_items(
            [(f"i{k}", k % 3, random_map(rng, 1, 1, 4)) for k in range(4)])
        got = proxy_nca_loss(batch, proxies)
        total = 0.0
        for k in range(4):
            v = gap(batch.fmap(k))
            label = int(batch.labels[k])
            d = {c: float(np.linalg.norm(v - gap(proxies.proxy(c))))
                 for c in proxies.labels}
            negs = [d[c] for c in proxies.labels if c != label]
            total += d[label] + math.log(sum(math.exp(-x) for x in negs))
        assert got == pytest.approx(total / 4, abs=1e-9)

    def test_missing_proxy_is_data_error(self, rng):
        proxies = ProxyBank.from_items([(0, random_map(rng)), (1, random_map(rng))])
        batch = Gallery.from_items([("x", 7, random_map(rng))])
        with pytest.raises(ValueError, match="7"):
            proxy_nca_loss(batch, proxies)

    def test_single_class_bank_rejected(self, rng):
        proxies = ProxyBank.from_items([(0, random_map(rng))])
        batch = Gallery.from_items([("x", 0, random_map(rng))])
        with pytest.raises(ValueError):
            proxy_nca_loss(batch, proxies)


class TestProxyBank:
    def test_lookup_and_missing(self, rng):
        fm = random_map(rng)
        bank = ProxyBank.from_items([(3, fm), (5, random_map(rng))])
        assert np.array_equal(bank.proxy(3).data, fm.data)
        with pytest.raises(KeyError):
            bank.proxy(4)

    def test_rejects_duplicates_and_mixed_shapes(self, rng):
        with pytest.raises(ValueError):
            ProxyBank.from_items([(0, random_map(rng)), (0, random_map(rng))])
        with pytest.raises(ValueError):
            ProxyBank.from_items([(0, random_map(rng, 1, 1, 4)),
                                  (1, random_map(rng, 2, 2, 4))])
