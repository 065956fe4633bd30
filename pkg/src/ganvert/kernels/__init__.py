"""Hot kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``GANVERT_BACKEND``:
``numba`` (default when numba imports) or ``numpy``.  Both backends agree
to rounding; artifacts are byte-reproducible within one backend.
"""

import os

import numpy as np

from . import _numpy

_requested = os.environ.get("GANVERT_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"GANVERT_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _impl = _numpy
else:
    _impl = _numpy

BACKEND = "numba" if _impl is not _numpy else "numpy"


def _as4d(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    return x, False


def conv2d(x, w):
    x4, squeeze = _as4d(x)
    out = _impl.conv2d(x4, np.ascontiguousarray(w))
    return out[0] if squeeze else out


def conv2d_grad_input(g, w):
    g4, squeeze = _as4d(g)
    out = _impl.conv2d_grad_input(g4, np.ascontiguousarray(w))
    return out[0] if squeeze else out


def conv2d_grad_weight(x, g, k):
    x4, _ = _as4d(x)
    g4, _ = _as4d(g)
    return _impl.conv2d_grad_weight(x4, g4, k)


def upgma_merges(sums, sizes, ids):
    return _impl.upgma_merges(
        np.array(sums, dtype=np.float64), np.asarray(sizes, dtype=np.float64),
        np.asarray(ids, dtype=np.int64))


def backend_module(name):
    """Return the kernel module for ``name``; used by the benchmark."""
    if name == "numpy":
        return _numpy
    from . import _numba
    return _numba
