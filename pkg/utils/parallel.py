"""Thread-capped execution helpers honoring FLOWREG_THREADS."""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import psutil

from utils.colored_logger import setup_logger

logger = setup_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(threads: int) -> int:
    """Map the runtime thread setting to a worker count (0 = physical cores)."""
    if threads > 0:
        return threads
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def kdtree_workers(threads: int) -> int:
    """Worker argument for cKDTree queries: -1 means all cores."""
    return -1 if threads == 0 else threads


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int) -> List[R]:
    """
    Apply fn to every item, returning results in input order.

    Runs sequentially when workers == 1 so that deterministic mode never
    touches a thread pool.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"Dispatching {len(items)} tasks to {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
