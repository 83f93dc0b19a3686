"""Thread-pool helper honouring the TOPODERIV_THREADS environment variable."""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    raw = os.environ.get("TOPODERIV_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        n = os.cpu_count() or 1
    return n


def parallel_map(fn, items):
    """Map ``fn`` over ``items``, using threads when more than one is allowed.

    Results keep the order of ``items``.  Scipy solves release the GIL, which
    is where the wall-clock win comes from.
    """
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
