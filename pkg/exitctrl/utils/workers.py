"""Thread pool for chunked path work"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple, TypeVar

from exitctrl.settings import thread_cap

logger = logging.getLogger(__name__)

ResultT = TypeVar("ResultT")


def chunk_ranges(n_items: int, chunk_size: int) -> List[Tuple[int, int]]:
    """Split [0, n_items) into consecutive half-open ranges"""
    return [(start, min(start + chunk_size, n_items)) for start in range(0, n_items, chunk_size)]


def map_chunks(
    fn: Callable[[int, int], ResultT],
    n_items: int,
    chunk_size: int = 512,
    workers: Optional[int] = None,
) -> List[ResultT]:
    """
    Run fn(start, stop) over consecutive chunks and return results in chunk order.

    Args:
        fn: Work function for one half-open index range
        n_items: Total number of items
        chunk_size: Items per chunk
        workers: Worker count (default: EXITCTRL_THREADS cap)

    Returns:
        List of per-chunk results ordered by start index
    """
    ranges = chunk_ranges(n_items, chunk_size)
    workers = min(workers or thread_cap(), max(len(ranges), 1))
    logger.debug("running %d chunks on %d workers", len(ranges), workers)
    if workers <= 1:
        return [fn(start, stop) for start, stop in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order
        return list(pool.map(lambda r: fn(*r), ranges))
