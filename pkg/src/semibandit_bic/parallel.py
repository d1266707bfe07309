"""Deterministic chunked replicate execution.

Replicates are split into fixed-size chunks; chunk ``k`` always draws from
``RngStream(seed, k)``, so results do not depend on the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

from .core import RngStream

T = TypeVar("T")

DEFAULT_CHUNK = 20_000


def chunk_sizes(replicates: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    full, rest = divmod(int(replicates), int(chunk))
    return [chunk] * full + ([rest] if rest else [])


def run_chunks(fn: Callable[[int, RngStream], T], replicates: int, seed: int,
               chunk: int = DEFAULT_CHUNK, threads: int = 1) -> list[T]:
    """Call ``fn(n, stream)`` once per chunk and return results in chunk order."""
    sizes = chunk_sizes(replicates, chunk)
    jobs = [(n, RngStream(seed, k)) for k, n in enumerate(sizes)]
    if threads <= 1 or len(jobs) <= 1:
        return [fn(n, s) for n, s in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
