"""
Deterministic evaluation of independent latent samples.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

from bcgn.services.tensor import Tape, active_tape

logger = logging.getLogger(__name__)

T = TypeVar("T")


def map_samples(fn: Callable[[int], T], count: int, threads: int = 1) -> List[T]:
    """
    Evaluate ``fn(k)`` for k in range(count).

    With ``threads > 1`` each sample records onto its own forked tape inside a
    worker thread; the forks are merged back in index order, so the resulting
    graph and every reduction over it are identical to the serial run.

    Args:
        fn: Per-sample computation
        count: Number of samples
        threads: Worker threads (1 = serial)

    Returns:
        Results in index order
    """
    if threads <= 1 or count <= 1:
        return [fn(k) for k in range(count)]

    parent = active_tape()
    children: List[Optional[Tape]] = [parent.fork() if parent else None for _ in range(count)]

    def run(k: int) -> T:
        child = children[k]
        if child is None:
            return fn(k)
        with child:
            return fn(k)

    with ThreadPoolExecutor(max_workers=min(threads, count)) as pool:
        results = list(pool.map(run, range(count)))

    if parent is not None:
        for child in children:
            parent.merge(child)
    return results
