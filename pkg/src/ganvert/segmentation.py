"""Unsupervised segmentation from the generator's self-attention map.

Pipeline: capture the query-by-key attention of the non-local block,
replicate key columns up to the query grid, turn attention into a
dissimilarity ``D = (1 - (A + A^T) / 2) * (1 - I)``, cluster with average
linkage, and paint each cluster with the mean color of its pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .generator import g1_forward, g2_forward


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AttentionMap:
    matrix: np.ndarray
    query_grid: tuple
    key_grid: tuple

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=np.float64)
        n, m = a.shape
        if self.query_grid[0] * self.query_grid[1] != n or self.key_grid[0] * self.key_grid[1] != m:
            raise GridError(f"grids {self.query_grid}, {self.key_grid} do not match matrix {a.shape}")
        if np.any(a < 0) or not np.allclose(a.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("attention matrix must be nonnegative and row-stochastic")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "query_grid", tuple(self.query_grid))
        object.__setattr__(self, "key_grid", tuple(self.key_grid))


def upsample_attention(att, factor):
    """Replicate each key column over its ``factor x factor`` block, divided by ``factor**2``."""
    kh, kw = att.key_grid
    if (kh * factor, kw * factor) != att.query_grid:
        raise GridError(f"key grid {att.key_grid} x {factor} != query grid {att.query_grid}")
    if factor == 1:
        return att
    n = att.matrix.shape[0]
    a = att.matrix.reshape(n, kh, 1, kw, 1)
    up = np.broadcast_to(a, (n, kh, factor, kw, factor)).reshape(n, kh * factor * kw * factor)
    return AttentionMap(up / factor ** 2, att.query_grid, att.query_grid)


def dissimilarity(a):
    a = np.asarray(a.matrix if isinstance(a, AttentionMap) else a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GridError(f"dissimilarity needs a square matrix, got {a.shape}")
    d = 1.0 - (a + a.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True)
class Dendrogram:
    """Merge records ``(id_a, id_b, distance, new_id)``; leaves are ``0..n-1``."""

    n: int
    merges: tuple

    def labels(self, k):
        if not 1 <= k <= self.n:
            raise ValueError(f"cluster count k must lie in [1, {self.n}], got {k}")
        parent = list(range(self.n + len(self.merges)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b, _, new in self.merges[: self.n - k]:
            parent[find(a)] = new
            parent[find(b)] = new
        roots = [find(i) for i in range(self.n)]
        order = {}
        for r in roots:
            order.setdefault(r, len(order))
        return np.array([order[r] for r in roots], dtype=np.int64)


def linkage(d):
    """Full average-linkage (UPGMA) merge tree for dissimilarity matrix ``d``.

    Ties on linkage distance go to the pair with the smallest
    ``(min id, max id)``; merged clusters take ids ``n, n+1, ...``.
    """
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise GridError(f"dissimilarity matrix must be square, got {d.shape}")
    if n == 1:
        return Dendrogram(1, ())
    upper = np.triu(d, 1)
    sums = upper + upper.T
    merges = kernels.upgma_merges(sums, np.ones(n), np.arange(n))
    return Dendrogram(n, tuple((int(a), int(b), float(dist), int(new)) for a, b, dist, new in merges))


def agglomerative_cluster(d, k):
    n = np.asarray(d).shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"cluster count k must lie in [1, {n}], got {k}")
    return linkage(d).labels(k)


def render(labels, grid, image):
    """Paint each grid cell with the mean color of its cluster's pixels.

    Every grid cell covers a block of ``image`` pixels; the output has the
    grid's resolution, shape ``(C, gh, gw)``.
    """
    image = np.asarray(image, dtype=np.float64)
    c, hh, ww = image.shape
    gh, gw = grid
    if hh % gh or ww % gw:
        raise GridError(f"image {image.shape[1:]} is not a multiple of grid {grid}")
    bh, bw = hh // gh, ww // gw
    blocks = image.reshape(c, gh, bh, gw, bw).sum(axis=(2, 4)).reshape(c, gh * gw)
    labels = np.asarray(labels)
    k = int(labels.max()) + 1
    totals = np.zeros((c, k))
    counts = np.bincount(labels, minlength=k) * (bh * bw)
    for ch in range(c):
        totals[ch] = np.bincount(labels, weights=blocks[ch], minlength=k)
    means = totals / counts
    return means[:, labels].reshape(c, gh, gw)


@dataclass
class Segmentation:
    k: int
    labels: np.ndarray
    grid: tuple
    rendered: np.ndarray

    @property
    def label_grid(self):
        return self.labels.reshape(self.grid)


def segment_attention(att, image, k_list):
    """Cluster an attention map at each ``k`` and render against ``image``."""
    factor = att.query_grid[0] // att.key_grid[0]
    full = upsample_attention(att, factor)
    tree = linkage(dissimilarity(full))
    out = []
    for k in k_list:
        labels = tree.labels(k)
        out.append(Segmentation(k, labels, att.query_grid, render(labels, att.query_grid, image)))
    return out


def segment(code, bundle, k_list):
    """Segment the image rendered from a dense code ``h`` or a latent ``z``."""
    code = np.asarray(code, dtype=np.float64)
    h = g1_forward(code, bundle) if code.shape[-1] == bundle.d_z else code
    image, a = g2_forward(h, bundle, capture_attention=True)
    cfg = bundle.config
    att = AttentionMap(a, cfg.query_grid, cfg.key_grid)
    return image, segment_attention(att, image, k_list)
