"""Thread-pool helpers honoring the LW_THREADS environment variable.

Work items must be pure; results are returned in input order so
accumulation stays deterministic regardless of scheduling.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker cap from LW_THREADS, defaulting to min(4, cpu count)."""
    raw = os.environ.get("LW_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            n = 1
        return max(1, n)
    return max(1, min(4, os.cpu_count() or 1))


def ordered_map(fn, items):
    """Map fn over items, preserving order.  Sequential when 1 worker."""
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
