from fractions import Fraction
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ganvert import kernels
from ganvert.segmentation import (AttentionMap, GridError, agglomerative_cluster, dissimilarity,
                                  linkage, render, segment, segment_attention, upsample_attention)


def brute_force_upgma(d, k):
    """Textbook average linkage on exact rationals.

    Every step recomputes every cluster-pair mean from the original matrix
    and merges the minimum, ties to the smallest (min id, max id).
    """
    n = len(d)
    exact = [[Fraction(float(v)) for v in row] for row in d]
    clusters = {i: [i] for i in range(n)}
    next_id = n
    while len(clusters) > k:
        best = None
        for a, b in itertools.combinations(sorted(clusters), 2):
            ma, mb = clusters[a], clusters[b]
            avg = sum(exact[i][j] for i in ma for j in mb) / (len(ma) * len(mb))
            key = (avg, min(a, b), max(a, b))
            if best is None or key < best:
                best = key
        _, a, b = best
        clusters[next_id] = clusters.pop(a) + clusters.pop(b)
        next_id += 1
    labels = np.empty(n, dtype=int)
    for members in clusters.values():
        labels[members] = min(members)
    _, first = np.unique(labels, return_index=True)
    order = {labels[i]: r for r, i in enumerate(sorted(first))}
    return np.array([order[v] for v in labels])


def random_dissimilarity(rng, n, dyadic):
    if dyadic:
        a = rng.integers(0, 5, size=(n, n)) / 4.0
    else:
        a = rng.uniform(size=(n, n))
    a = a / a.sum(axis=1, keepdims=True) if not dyadic else a
    d = np.triu(a, 1)
    d = d + d.T
    return np.clip(d, 0, 1)


def test_dissimilarity_hand_cases():
    np.testing.assert_array_equal(dissimilarity(np.eye(2)), [[0, 1], [1, 0]])
    np.testing.assert_array_equal(dissimilarity(np.full((2, 2), 0.5)), [[0, 0.5], [0.5, 0]])
    np.testing.assert_array_equal(dissimilarity(np.array([[1.0, 0.0], [0.6, 0.4]])), [[0, 0.7], [0.7, 0]])


def test_dissimilarity_non_square():
    with pytest.raises(GridError):
        dissimilarity(np.ones((2, 3)) / 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2 ** 31))
def test_dissimilarity_properties(n, seed):
    a = np.random.default_rng(seed).uniform(size=(n, n))
    a /= a.sum(axis=1, keepdims=True)
    d = dissimilarity(a)
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)
    assert np.all((d >= 0) & (d <= 1))


def test_upsample_factor_one_is_identity():
    a = AttentionMap(np.full((4, 4), 0.25), (2, 2), (2, 2))
    assert np.array_equal(upsample_attention(a, 1).matrix, a.matrix)


def test_upsample_single_key():
    a = AttentionMap(np.ones((4, 1)), (2, 2), (1, 1))
    up = upsample_attention(a, 2)
    assert up.matrix.shape == (4, 4)
    np.testing.assert_array_equal(up.matrix, np.full((4, 4), 0.25))


def test_upsample_places_columns_on_blocks():
    m = np.zeros((16, 4))
    m[:, 1] = 1.0   # key cell (0, 1) covers query cells rows 0-1, cols 2-3
    up = upsample_attention(AttentionMap(m, (4, 4), (2, 2)), 2).matrix.reshape(16, 4, 4)
    expected = np.zeros((4, 4))
    expected[0:2, 2:4] = 0.25
    for row in up:
        np.testing.assert_array_equal(row, expected)


def test_upsample_grid_mismatch():
    with pytest.raises(GridError):
        upsample_attention(AttentionMap(np.ones((4, 1)), (2, 2), (1, 1)), 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([(4, 2), (8, 2), (8, 4), (6, 3)]))
def test_upsample_rows_stay_stochastic(seed, grids):
    q, k = grids
    m = np.random.default_rng(seed).uniform(size=(q * q, k * k))
    m /= m.sum(axis=1, keepdims=True)
    up = upsample_attention(AttentionMap(m, (q, q), (k, k)), q // k)
    np.testing.assert_allclose(up.matrix.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_attention_map_validation():
    with pytest.raises(GridError):
        AttentionMap(np.ones((4, 1)), (3, 1), (1, 1))
    with pytest.raises(ValueError):
        AttentionMap(np.full((2, 2), 0.7), (1, 2), (1, 2))


def test_cluster_extremes():
    d = random_dissimilarity(np.random.default_rng(0), 6, False)
    np.testing.assert_array_equal(agglomerative_cluster(d, 6), np.arange(6))
    np.testing.assert_array_equal(agglomerative_cluster(d, 1), np.zeros(6))
    with pytest.raises(ValueError):
        agglomerative_cluster(d, 0)
    with pytest.raises(ValueError):
        agglomerative_cluster(d, 7)


def test_two_blocks_all_merge_orders():
    d = np.full((4, 4), 0.9)
    d[0, 1] = d[1, 0] = d[2, 3] = d[3, 2] = 0.1
    np.fill_diagonal(d, 0)
    # every permutation of the points must recover the same partition
    for perm in itertools.permutations(range(4)):
        p = np.array(perm)
        labels = agglomerative_cluster(d[np.ix_(p, p)], 2)
        groups = {frozenset(p[labels == c]) for c in range(2)}
        assert groups == {frozenset({0, 1}), frozenset({2, 3})}


def test_matches_brute_force_reference():
    rng = np.random.default_rng(2024)
    trials = 0
    for n in range(2, 11):
        for t in range(24):
            d = random_dissimilarity(rng, n, dyadic=t % 2 == 0)
            tree = linkage(d)
            for k in range(1, n + 1):
                np.testing.assert_array_equal(tree.labels(k), brute_force_upgma(d, k),
                                              err_msg=f"n={n} trial={t} k={k}")
            trials += 1
    assert trials >= 200


def test_all_equal_dissimilarity_tie_break():
    d = np.ones((5, 5)) - np.eye(5)
    tree = linkage(d)
    assert tree.merges[0][:2] == (0, 1)
    assert tree.merges[1][:2] == (2, 3)
    np.testing.assert_array_equal(tree.labels(3), [0, 0, 1, 1, 2])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2 ** 31))
def test_hierarchical_consistency(n, seed):
    tree = linkage(random_dissimilarity(np.random.default_rng(seed), n, False))
    for k in range(2, n + 1):
        fine, coarse = tree.labels(k), tree.labels(k - 1)
        assert len(set(fine)) == k
        for c in set(fine):
            assert len(set(coarse[fine == c])) == 1


@pytest.mark.parametrize("name", ["numpy", "numba"])
def test_backends_give_identical_merges(name):
    rng = np.random.default_rng(5)
    ref = kernels.backend_module("numpy")
    mod = kernels.backend_module(name)
    for dyadic in (True, False):
        d = random_dissimilarity(rng, 30, dyadic)
        s = np.triu(d, 1) + np.triu(d, 1).T
        a = ref.upgma_merges(s.copy(), np.ones(30), np.arange(30))
        b = mod.upgma_merges(s.copy(), np.ones(30), np.arange(30))
        assert np.array_equal(a, b)


def _block_attention(groups, n):
    a = np.zeros((n, n))
    for g in groups:
        a[np.ix_(g, g)] = 1.0 / len(g)
    return a


def test_block_attention_recovered_at_k2():
    grid = (4, 4)
    cells = np.arange(16).reshape(grid)
    left, right = cells[:, :2].ravel(), cells[:, 2:].ravel()
    att = AttentionMap(_block_attention([left, right], 16), grid, grid)
    img = np.zeros((3, 8, 8))
    (seg,) = segment_attention(att, img, [2])
    lg = seg.label_grid
    assert np.all(lg[:, :2] == 0) and np.all(lg[:, 2:] == 1)


def test_render_singletons_is_block_downsample(rng):
    img = rng.uniform(-1, 1, size=(3, 8, 8))
    out = render(np.arange(16), (4, 4), img)
    np.testing.assert_allclose(out, img.reshape(3, 4, 2, 4, 2).mean(axis=(2, 4)), rtol=0, atol=1e-15)


def test_render_single_cluster_is_global_mean(rng):
    img = rng.uniform(-1, 1, size=(3, 8, 8))
    out = render(np.zeros(16, dtype=int), (4, 4), img)
    np.testing.assert_allclose(out, np.broadcast_to(img.mean(axis=(1, 2))[:, None, None], out.shape),
                               rtol=0, atol=1e-14)


def test_render_grid_mismatch(rng):
    with pytest.raises(GridError):
        render(np.zeros(9, dtype=int), (3, 3), np.zeros((3, 8, 8)))


def test_segment_bundle_end_to_end(bundle, rng):
    z = rng.normal(size=bundle.d_z)
    image, segs = segment(z, bundle, [1, 8, 64])
    assert [s.k for s in segs] == [1, 8, 64]
    for s in segs:
        assert s.rendered.shape == (3, 8, 8)
        assert s.label_grid.shape == (8, 8)
        assert len(np.unique(s.labels)) == s.k
    assert np.unique(segs[0].rendered.reshape(3, -1), axis=1).shape[1] == 1
    np.testing.assert_allclose(segs[2].rendered, image.reshape(3, 8, 2, 8, 2).mean(axis=(2, 4)),
                               rtol=0, atol=1e-14)
    _, again = segment(z, bundle, [1, 8, 64])
    for a, b in zip(segs, again):
        assert np.array_equal(a.labels, b.labels) and np.array_equal(a.rendered, b.rendered)
