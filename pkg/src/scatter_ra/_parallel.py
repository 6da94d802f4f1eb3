from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_jobs(jobs) -> int:
    if jobs is None or jobs <= 0:
        return os.cpu_count() or 1
    return int(jobs)


def parallel_map(fn, items, jobs=1) -> list:
    """Ordered map; results never depend on ``jobs``.

    Threads are enough here: the heavy kernels are numba ``nogil`` loops
    or numpy calls that release the GIL.
    """
    items = list(items)
    n = resolve_jobs(jobs)
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))
