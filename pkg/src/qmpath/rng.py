"""Vectorized Philox4x32-10 counter-based generator.

Each random block is a pure function of (key, counter), so the numbers
drawn for trajectory ``i`` at step ``k`` do not depend on batch size,
thread count or evaluation order.
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
    """Philox4x32 bijection.

    Parameters
    ----------
    counter : sequence of four uint32 arrays (broadcastable)
    key : pair of uint32 scalars

    Returns
    -------
    tuple of four uint32 arrays
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for i in range(rounds):
        if i:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = ((p1 >> _SHIFT) ^ c1 ^ k0, p1 & _MASK,
                          (p0 >> _SHIFT) ^ c3 ^ k1, p0 & _MASK)
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


class CounterStream:
    """Random uniforms addressed by (trajectory index, step index).

    The 64-bit master seed is the Philox key; the counter packs the step
    index, the 64-bit trajectory index and a stream tag that separates
    independent uses of the same (trajectory, step) address.
    """

    def __init__(self, seed: int, tag: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.tag = int(tag)
        self._key = (seed & 0xFFFFFFFF, seed >> 32)

    def words(self, traj, step):
        traj = np.asarray(traj, dtype=np.uint64)
        step = np.asarray(step, dtype=np.uint64)
        return philox4x32((step, traj & _MASK, traj >> _SHIFT, np.uint64(self.tag)), self._key)

    def uniforms(self, traj, step):
        """Two uniforms per address: a 32-bit one and a 53-bit one, both in (0, 1)."""
        w0, w1, w2, _ = self.words(traj, step)
        u32 = (w0.astype(np.float64) + 0.5) * 2.0**-32
        hi = (w1 >> np.uint32(5)).astype(np.float64)
        lo = (w2 >> np.uint32(6)).astype(np.float64)
        u53 = (hi * 2.0**26 + lo + 0.5) * 2.0**-53
        return u32, u53
