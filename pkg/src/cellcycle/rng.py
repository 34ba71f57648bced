"""Counter-based random streams (Philox4x32-10), vectorised over counters.

Every draw is a pure function of (seed, cell index, draw index), so
results do not depend on how cells are split between workers.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function.

    ``counter`` is a sequence of four uint32 arrays (broadcastable), ``key``
    a pair.  Returns four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK for k in key)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


def split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed: int, cells, draws, tag: int = 0) -> np.ndarray:
    """Uniform doubles in [0, 1) for each (cell, draw) pair.

    Uses 53 bits from the first two output words.
    """
    cells = np.asarray(cells, dtype=np.uint64)
    draws = np.asarray(draws, dtype=np.uint64)
    w = philox4x32((draws, cells & _MASK, cells >> _SHIFT, np.uint64(tag)), split_seed(seed))
    hi = w[0].astype(np.uint64) >> np.uint64(5)
    lo = w[1].astype(np.uint64) >> np.uint64(6)
    return (hi * np.uint64(1 << 26) + lo).astype(np.float64) * (1.0 / (1 << 53))


class CellStream:
    """Sequential view of the stream belonging to one cell."""

    def __init__(self, seed: int, cell: int = 0, tag: int = 0):
        self.seed = int(seed)
        self.cell = int(cell)
        self.tag = int(tag)
        self.counter = 0

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        draws = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        u = uniforms(self.seed, np.full(n, self.cell, dtype=np.uint64), draws, self.tag)
        if size is None:
            return float(u[0])
        return u.reshape(size)


class FixedStream:
    """Stream that replays given values; handy for pinning draws in tests."""

    def __init__(self, values):
        self.values = list(values)

    def random(self, size=None):
        if size is None:
            return float(self.values.pop(0))
        n = int(np.prod(size))
        out = [self.values.pop(0) for _ in range(n)]
        return np.asarray(out, dtype=float).reshape(size)
