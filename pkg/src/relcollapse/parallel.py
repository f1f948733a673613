"""Ordered, deterministic work distribution.

Results are always returned in input order and every work item derives its
own random stream from ``(seed, index)``, so the output does not depend on the
number of workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional


def default_threads() -> int:
    """Worker count from ``ARTIFACT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("ARTIFACT_THREADS", "1")))
    except ValueError:
        return 1


def ordered_map(fn: Callable, items: Iterable, threads: Optional[int] = None) -> List:
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
