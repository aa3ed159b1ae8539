"""Replica fan-out with seeds derived from (master seed, replica index)."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

from .lattice import derive_seed


def replica_seeds(master: int, count: int) -> list[int]:
    return [derive_seed(master, i) for i in range(count)]


def _call(args):
    fn, index, seed = args
    return fn(index, seed)


def map_replicas(fn: Callable[[int, int], object], master: int, count: int, workers: int = 1) -> list:
    """Run ``fn(index, seed)`` for every replica; results come back in index order.

    ``fn`` must be picklable when ``workers > 1``.
    """
    tasks = [(fn, i, s) for i, s in enumerate(replica_seeds(master, count))]
    if workers <= 1 or count <= 1:
        return [_call(t) for t in tasks]
    chunk = max(1, count // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, tasks, chunksize=chunk))
