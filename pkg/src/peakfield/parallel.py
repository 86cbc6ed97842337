"""Trial-parallel execution.

Trials are cut into fixed-size chunks; chunk ``k`` of purpose ``tag`` always
draws from stream ``stream_id(tag, k)``. The chunking does not depend on the
worker count and results come back in chunk order, so merged estimates are
identical for any number of workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterator, TypeVar

import numpy as np

from ._rng import make_rng, stream_id

T = TypeVar("T")

DEFAULT_CHUNK = 8192

_workers = 1


def get_workers() -> int:
    return _workers


def set_workers(n: int) -> None:
    global _workers
    if int(n) < 1:
        raise ValueError("workers must be >= 1")
    _workers = int(n)


@contextmanager
def workers(n: int) -> Iterator[None]:
    """Temporarily run chunked kernels on ``n`` threads."""
    previous = _workers
    set_workers(n)
    try:
        yield
    finally:
        set_workers(previous)


def chunk_sizes(trials: int, chunk_size: int = DEFAULT_CHUNK) -> list[int]:
    trials = int(trials)
    if trials < 0:
        raise ValueError("trials must be non-negative")
    full, rest = divmod(trials, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def map_chunks(
    kernel: Callable[[np.random.Generator, int], T],
    trials: int,
    seed: int,
    tag: str,
    chunk_size: int = DEFAULT_CHUNK,
    n_workers: int | None = None,
) -> list[T]:
    """Run ``kernel(rng, size)`` over all chunks and return results in chunk order."""
    sizes = chunk_sizes(trials, chunk_size)

    def task(k: int) -> T:
        return kernel(make_rng(seed, stream_id(tag, k)), sizes[k])

    n_workers = n_workers or _workers
    if n_workers == 1 or len(sizes) <= 1:
        return [task(k) for k in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(task, range(len(sizes))))
