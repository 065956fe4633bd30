"""Numba-compiled versions of the hot kernels.

fastmath stays off: results must be reproducible bit for bit.
"""

import numpy as np
from numba import njit

_jit = njit(cache=True, nogil=True, fastmath=False)


@_jit
def _im2col(x, k):
    # rows: (n, y, x); cols: (c, i, j); zero outside the image
    b, cin, h, wd = x.shape
    p = k // 2
    cols = np.zeros((b * h * wd, cin * k * k))
    for n in range(b):
        for y in range(h):
            for xx in range(wd):
                r = (n * h + y) * wd + xx
                col = 0
                for c in range(cin):
                    for i in range(k):
                        yy = y + i - p
                        for j in range(k):
                            xj = xx + j - p
                            if 0 <= yy < h and 0 <= xj < wd:
                                cols[r, col] = x[n, c, yy, xj]
                            col += 1
    return cols


@_jit
def _rows_to_nchw(m, b, h, wd):
    c = m.shape[1]
    out = np.empty((b, c, h, wd))
    for n in range(b):
        for y in range(h):
            for xx in range(wd):
                r = (n * h + y) * wd + xx
                for o in range(c):
                    out[n, o, y, xx] = m[r, o]
    return out


@_jit
def conv2d(x, w):
    b, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    cols = _im2col(x, k)
    wm = np.ascontiguousarray(w.reshape(cout, cin * k * k).T)
    return _rows_to_nchw(np.dot(cols, wm), b, h, wd)


@_jit
def conv2d_grad_input(g, w):
    cout, cin, k, _ = w.shape
    flipped = np.empty((cin, cout, k, k))
    for o in range(cout):
        for c in range(cin):
            for i in range(k):
                for j in range(k):
                    flipped[c, o, i, j] = w[o, c, k - 1 - i, k - 1 - j]
    return conv2d(g, flipped)


@_jit
def conv2d_grad_weight(x, g, k):
    b, cin, h, wd = x.shape
    cout = g.shape[1]
    cols = _im2col(x, k)
    gm = np.empty((cout, b * h * wd))
    for n in range(b):
        for o in range(cout):
            for y in range(h):
                for xx in range(wd):
                    gm[o, (n * h + y) * wd + xx] = g[n, o, y, xx]
    return np.dot(gm, cols).reshape(cout, cin, k, k)


@_jit
def upgma_merges(sums, sizes, ids):
    n = sums.shape[0]
    sz = sizes.astype(np.float64).copy()
    cid = ids.astype(np.int64).copy()
    active = np.ones(n, dtype=np.bool_)
    merges = np.empty((n - 1, 4))
    for step in range(n - 1):
        best = np.inf
        blo = -1
        bhi = -1
        ba = -1
        bb = -1
        for i in range(n):
            if not active[i]:
                continue
            for j in range(i + 1, n):
                if not active[j]:
                    continue
                v = sums[i, j] / (sz[i] * sz[j])
                lo = min(cid[i], cid[j])
                hi = max(cid[i], cid[j])
                if v < best or (v == best and (lo < blo or (lo == blo and hi < bhi))):
                    best = v
                    blo = lo
                    bhi = hi
                    ba = i
                    bb = j
        merges[step, 0] = blo
        merges[step, 1] = bhi
        merges[step, 2] = best
        merges[step, 3] = n + step
        for j in range(n):
            s = sums[ba, j] + sums[bb, j]
            sums[ba, j] = s
            sums[j, ba] = s
        sums[ba, ba] = 0.0
        sz[ba] += sz[bb]
        cid[ba] = n + step
        active[bb] = False
    return merges
