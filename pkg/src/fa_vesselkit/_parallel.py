import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "FA_VESSELKIT_THREADS"


def thread_count() -> int:
    """Worker cap from ``FA_VESSELKIT_THREADS`` (0 or unset = cpu count)."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def ordered_map(fn, items):
    """``map`` that may run on threads but always returns results in input order."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
