"""Replicate orchestration.

Replicates are cut into fixed-size chunks that do not depend on the thread
budget.  Each chunk is a pure function of ``(seed, first replicate, count)``
and the results are concatenated in replicate order, so any thread count
yields the same arrays.  The compiled kernels release the GIL, which is what
makes the thread pool useful.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

DEFAULT_CHUNK = 512


def chunk_bounds(n_rep: int, chunk: int = DEFAULT_CHUNK, rep_start: int = 0):
    if n_rep < 0:
        raise ValueError("replicate count must be nonnegative")
    return [(rep_start + s, min(chunk, n_rep - s)) for s in range(0, n_rep, chunk)]


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def run_chunked(fn: Callable[[int, int], Sequence[np.ndarray]], n_rep: int, *, threads: int = 1,
                chunk: int = DEFAULT_CHUNK, rep_start: int = 0) -> list[np.ndarray]:
    """Call ``fn(first, count)`` per chunk and concatenate each output along axis 0."""
    bounds = chunk_bounds(n_rep, chunk, rep_start)
    if not bounds:
        parts = [fn(rep_start, 0)]
    elif resolve_threads(threads) == 1 or len(bounds) == 1:
        parts = [fn(s, n) for s, n in bounds]
    else:
        with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    return [np.concatenate([p[i] for p in parts], axis=0) for i in range(len(parts[0]))]
