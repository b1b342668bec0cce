"""Counter-based random streams and a worker pool whose results do not
depend on the number of workers."""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ._accel import default_threads

CHUNK = 1 << 16
_MASK64 = (1 << 64) - 1


def stream(seed, *key):
    """Philox generator keyed by ``(seed, *key)``; independent per key."""
    words = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def chunk_bounds(total, size=CHUNK):
    """``(index, count)`` pairs covering ``total`` items in fixed-size chunks."""
    out = []
    start = 0
    j = 0
    while start < total:
        c = min(size, total - start)
        out.append((j, c))
        start += c
        j += 1
    return out


def pmap(func, items, threads=None):
    """Ordered map; ``threads > 1`` runs items on a thread pool."""
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) < 2:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(func, items))
