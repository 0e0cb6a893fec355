"""Counter-based Gaussian streams and an order-preserving replication runner.

Every random draw is addressed by ``(seed, replication, substream)``: the
Philox key holds ``(seed, replication)`` and the top counter word holds the
substream, so the ``k``-th replication of any Monte Carlo loop sees the same
numbers whatever the chunking or the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

_MASK = (1 << 64) - 1

DEFAULT_CHUNK = 256


def generator(seed: int, stream: int, substream: int = 0) -> np.random.Generator:
    key = np.array([seed & _MASK, stream & _MASK], dtype=np.uint64)
    counter = np.array([0, 0, 0, substream & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def normals(seed: int, stream: int, n: int, substream: int = 0) -> np.ndarray:
    """``n`` standard normals of replication ``stream``."""
    return generator(seed, stream, substream).standard_normal(n)


def normal_block(seed: int, streams, n: int, substream: int = 0) -> np.ndarray:
    """Stack of ``normals`` for several replications, shape ``(len(streams), n)``."""
    streams = np.atleast_1d(streams)
    out = np.empty((len(streams), n))
    for row, k in enumerate(streams):
        out[row] = normals(seed, int(k), n, substream)
    return out


def run_replications(
    fn: Callable[[np.ndarray], np.ndarray],
    reps: int,
    threads: int = 1,
    chunk: int = DEFAULT_CHUNK,
    start: int = 0,
) -> np.ndarray:
    """Apply ``fn`` to consecutive blocks of replication indices and concatenate.

    ``fn`` receives an index array and must return results whose first axis
    matches it.  Block boundaries depend only on ``chunk``, and results are
    gathered in index order, so the output is independent of ``threads``.
    """
    blocks = [np.arange(i, min(i + chunk, reps)) + start for i in range(0, reps, chunk)]
    if threads <= 1 or len(blocks) == 1:
        parts = [fn(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, blocks))
    return np.concatenate(parts, axis=0)
