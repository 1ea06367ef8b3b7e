"""Ordered thread-pool map used for ensemble members, grid points and replicates."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import os
from typing import Callable, Iterable, List, Optional, TypeVar

from tqdm import tqdm

THREADS_ENV = "WIND_ESN_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit value, else $WIND_ESN_THREADS, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        threads = int(env) if env.isdigit() else 1
    return max(1, int(threads))


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None,
                 desc: Optional[str] = None, unit: str = "item") -> List[R]:
    """Apply ``func`` to every item; results are returned in input order."""
    items = list(items)
    threads = resolve_threads(threads)
    show = desc is not None and len(items) > 1
    if threads == 1 or len(items) <= 1:
        return [func(item) for item in tqdm(items, desc=desc, unit=unit, leave=False,
                                            disable=not show)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(tqdm(pool.map(func, items), total=len(items), desc=desc, unit=unit,
                         leave=False, disable=not show))
