"""Pure-numpy implementations of the hot kernels."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    # (B, Cin, H, W, k, k)
    return sliding_window_view(xp, (k, k), axis=(2, 3))


def conv2d(x, w):
    """Same-padded stride-1 cross-correlation of (B, Cin, H, W) with (Cout, Cin, k, k)."""
    b, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    win = _windows(x, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * wd, cin * k * k)
    out = cols @ w.reshape(cout, cin * k * k).T
    return np.ascontiguousarray(out.reshape(b, h, wd, cout).transpose(0, 3, 1, 2))


def conv2d_grad_input(g, w):
    flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d(g, flipped)


def conv2d_grad_weight(x, g, k):
    b, cin, h, wd = x.shape
    cout = g.shape[1]
    win = _windows(x, k)
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(cin * k * k, b * h * wd)
    gm = g.transpose(1, 0, 2, 3).reshape(cout, b * h * wd)
    return (gm @ cols.T).reshape(cout, cin, k, k)


def upgma_merges(sums, sizes, ids):
    """Run average-linkage agglomeration to a single cluster.

    ``sums[i, j]`` holds the total pairwise dissimilarity between the
    clusters in slots ``i`` and ``j``; it is updated in place.  Returns an
    ``(n - 1, 4)`` float array of ``(id_a, id_b, distance, new_id)`` rows with
    ``id_a < id_b``.
    """
    n = sums.shape[0]
    sizes = sizes.astype(np.float64).copy()
    ids = ids.astype(np.int64).copy()
    active = np.ones(n, dtype=bool)
    merges = np.empty((n - 1, 4))
    iu = np.triu_indices(n, 1)
    for step in range(n - 1):
        avg = sums / np.outer(sizes, sizes)
        valid = active[iu[0]] & active[iu[1]]
        vals = avg[iu][valid]
        ri, rj = iu[0][valid], iu[1][valid]
        best = vals.min()
        tied = np.flatnonzero(vals == best)
        lo = np.minimum(ids[ri[tied]], ids[rj[tied]])
        hi = np.maximum(ids[ri[tied]], ids[rj[tied]])
        pick = tied[np.lexsort((hi, lo))[0]]
        a, b = ri[pick], rj[pick]
        ida, idb = sorted((ids[a], ids[b]))
        merges[step] = (ida, idb, best, n + step)
        sums[a, :] += sums[b, :]
        sums[:, a] += sums[:, b]
        sums[a, a] = 0.0
        sizes[a] += sizes[b]
        ids[a] = n + step
        active[b] = False
    return merges
