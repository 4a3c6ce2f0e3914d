"""Tiny helper for deterministic fan-out over worker threads.

Results always come back in input order, so worker count never changes
what callers see; threads <= 1 runs inline with zero pool overhead.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, threads: int = 1):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
