import os
from concurrent.futures import ProcessPoolExecutor


def available_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def ordered_map(fn, items, threads: int = 1, chunksize: int = 1):
    """``map`` over worker processes; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
