"""Feature-map container, grid pooling, and pooled-mean behaviour."""

import numpy as np
import pytest

from structmatch import FeatureMap, Gallery, gap, pool_grid

from conftest import random_map


# --- independent pooling reference -----------------------------------------
# Pools by integrating the piecewise-constant cell field over each output
# cell's rectangle, with per-axis interval overlaps computed from scratch.

def _overlap(n_in, n_out):
    w = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = j * n_in / n_out, (j + 1) * n_in / n_out
        for i in range(n_in):
            w[j, i] = max(0.0, min(hi, i + 1) - max(lo, i))
    return w / (n_in / n_out)


def _pool_reference(data, g):
    h, w, d = data.shape
    wr, wc = _overlap(h, g), _overlap(w, g)
    out = np.zeros((g, g, d))
    for a in range(g):
        for b in range(g):
            for i in range(h):
                for j in range(w):
                    out[a, b] += wr[a, i] * wc[b, j] * data[i, j]
    return out


class TestFeatureMap:
    def test_shape_properties(self):
        fm = FeatureMap(np.zeros((3, 5, 7)))
        assert (fm.grid_h, fm.grid_w, fm.dim) == (3, 5, 7)
        assert fm.n_cells == 15
        assert fm.cells.shape == (15, 7)

    def test_cells_row_major(self):
        data = np.arange(2 * 3 * 1, dtype=float).reshape(2, 3, 1)
        fm = FeatureMap(data)
        assert np.array_equal(fm.cells[:, 0], np.arange(6.0))

    def test_immutable(self):
        fm = FeatureMap(np.ones((2, 2, 2)))
        with pytest.raises(ValueError):
            fm.data[0, 0, 0] = 5.0

    def test_copies_input(self):
        src = np.ones((2, 2, 2))
        fm = FeatureMap(src)
        src[0, 0, 0] = 99.0
        assert fm.data[0, 0, 0] == 1.0

    def test_from_cells_round_trip(self, rng):
        fm = random_map(rng, 3, 4, 5)
        again = FeatureMap.from_cells(fm.cells, 3, 4)
        assert np.array_equal(again.data, fm.data)

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            FeatureMap(np.zeros((4, 4)))

    def test_rejects_nonfinite(self):
        bad = np.ones((2, 2, 2))
        bad[1, 1, 1] = np.nan
        with pytest.raises(ValueError):
            FeatureMap(bad)


class TestPoolGrid:
    def test_known_2x2_means(self):
        # 4x4 field holding 1..16: each 2x2 block mean is hand-checkable.
        data = np.arange(1.0, 17.0).reshape(4, 4, 1)
        pooled = pool_grid(FeatureMap(data), 2)
        assert np.allclose(pooled.data[:, :, 0], [[3.5, 5.5], [11.5, 13.5]])

    def test_identity_when_sizes_match(self, rng):
        fm = random_map(rng, 3, 3, 4)
        assert np.array_equal(pool_grid(fm, 3).data, fm.data)

    def test_divisible_grid_is_exact_block_mean(self, rng):
        fm = random_map(rng, 6, 6, 3)
        pooled = pool_grid(fm, 2)
        for a in range(2):
            for b in range(2):
                block = fm.data[3 * a:3 * a + 3, 3 * b:3 * b + 3]
                assert np.allclose(pooled.data[a, b], block.mean(axis=(0, 1)), atol=1e-12)

    def test_matches_reference_on_awkward_sizes(self, rng):
        for h, w, g in [(5, 7, 2), (7, 7, 3), (3, 5, 2), (7, 5, 4)]:
            fm = random_map(rng, h, w, 3)
            got = pool_grid(fm, g).data
            want = _pool_reference(fm.data, g)
            assert np.allclose(got, want, atol=1e-12), (h, w, g)

    def test_constant_field_stays_constant(self, rng):
        c = rng.normal(size=3)
        fm = FeatureMap(np.broadcast_to(c, (7, 7, 3)).copy())
        pooled = pool_grid(fm, 4)
        assert np.allclose(pooled.data, c, atol=1e-12)

    def test_preserves_overall_mean(self, rng):
        # Area weighting keeps the global average invariant for any g.
        fm = random_map(rng, 7, 7, 4)
        for g in (1, 2, 3, 4, 5, 6):
            pooled = pool_grid(fm, g)
            assert np.allclose(gap(pooled), gap(fm), atol=1e-12)

    def test_linear_in_input(self, rng):
        a = random_map(rng, 5, 5, 3)
        b = random_map(rng, 5, 5, 3)
        lhs = pool_grid(FeatureMap(2.0 * a.data + b.data), 3).data
        rhs = 2.0 * pool_grid(a, 3).data + pool_grid(b, 3).data
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_rejects_upsampling(self, rng):
        with pytest.raises(ValueError):
            pool_grid(random_map(rng, 3, 5, 2), 4)

    def test_rejects_bad_target(self, rng):
        with pytest.raises(ValueError):
            pool_grid(random_map(rng), 0)


class TestGap:
    def test_hand_value(self):
        data = np.array([[[1.0, 0.0], [3.0, 2.0]], [[5.0, 4.0], [7.0, 2.0]]])
        assert np.allclose(gap(FeatureMap(data)), [4.0, 2.0])

    def test_matches_cell_mean(self, rng):
        fm = random_map(rng, 4, 3, 6)
        assert np.allclose(gap(fm), fm.cells.mean(axis=0), atol=1e-15)

    def test_gap_of_pooled_equals_gap(self, rng):
        fm = random_map(rng, 7, 7, 5)
        assert np.allclose(gap(pool_grid(fm, 2)), gap(fm), atol=1e-12)


class TestGallery:
    def test_from_items_preserves_order(self, rng):
        items = [(f"x{i}", i % 2, random_map(rng)) for i in range(5)]
        g = Gallery.from_items(items)
        assert g.ids == tuple(f"x{i}" for i in range(5))
        assert list(g.labels) == [0, 1, 0, 1, 0]
        assert g.features.shape == (5, 2, 2, 4)

    def test_lookup(self, rng):
        items = [("a", 0, random_map(rng)), ("b", 1, random_map(rng))]
        g = Gallery.from_items(items)
        assert g.index_of("b") == 1
        assert np.array_equal(g.fmap(g.index_of("a")).data, items[0][2].data)
        with pytest.raises(KeyError):
            g.index_of("zzz")

    def test_rejects_duplicate_ids(self, rng):
        items = [("a", 0, random_map(rng)), ("a", 1, random_map(rng))]
        with pytest.raises(ValueError):
            Gallery.from_items(items)

    def test_rejects_mixed_shapes(self, rng):
        items = [("a", 0, random_map(rng, 2, 2, 4)), ("b", 0, random_map(rng, 3, 3, 4))]
        with pytest.raises(ValueError):
            Gallery.from_items(items)

    def test_rejects_negative_label(self, rng):
        with pytest.raises(ValueError):
            Gallery.from_items([("a", -1, random_map(rng))])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Gallery.from_items([])
