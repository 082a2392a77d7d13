"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, label path, block index)``. Samples are partitioned into blocks of
``BLOCK_SIZE`` consecutive indices; each block owns one generator, so a
sample's randomness depends only on its index and never on how blocks are
distributed across workers.
"""
import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 8192


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def thread_count():
    """Worker cap from ``DFM_THREADS`` (default 1)."""
    raw = os.environ.get("DFM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class RngStream:
    """A labelled, splittable stream rooted at a 64-bit seed."""

    def __init__(self, seed, path=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)

    def child(self, label):
        return RngStream(self.seed, self.path + (_label_key(label),))

    def generator(self, block=0):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path + (int(block),))
        key = ss.generate_state(2, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def derived_seed(self):
        """64-bit integer summarising this stream (for sidecar records)."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def blocks(self, n):
        """List of ``(start, stop, generator)`` covering ``range(n)``."""
        out = []
        for b, start in enumerate(range(0, n, BLOCK_SIZE)):
            out.append((start, min(start + BLOCK_SIZE, n), self.generator(b)))
        return out

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def as_stream(rng):
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))


def map_blocks(fn, rng, n):
    """Apply ``fn(gen, m)`` to each block of ``n`` samples and concatenate.

    Results are assembled in block order, so the output is invariant to the
    number of worker threads.
    """
    blocks = as_stream(rng).blocks(n)
    jobs = [(gen, stop - start) for start, stop, gen in blocks]
    workers = min(thread_count(), len(jobs))
    if workers <= 1:
        parts = [fn(gen, m) for gen, m in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: fn(*job), jobs))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
    return np.concatenate(parts, axis=0)
