"""Order-preserving parallel map capped by ``GANVERT_THREADS``."""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    raw = os.environ.get("GANVERT_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"GANVERT_THREADS must be >= 1, got {raw!r}")
    return n


def map_ordered(fn, items, threads=None):
    """``[fn(x) for x in items]``, possibly on worker threads; order is kept."""
    items = list(items)
    n = min(threads or thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
