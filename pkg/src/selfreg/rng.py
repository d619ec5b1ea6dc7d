"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of ``(seed, replicate, tag, index)``, so
replicates can be run in any order, on any number of threads, and coupled
runs can share Brownian increments simply by reusing the same replicate
index.  The compiled kernels and the pure-Python twin implement exactly the
same bit manipulations as this module.

Counter layout::

    c0 = replicate (low 32 bits)
    c1 = tag | (sub << 8)
    c2, c3 = draw index (low, high 32 bits)

and the key is the 64-bit master seed split into two words.
"""
from __future__ import annotations

import math

import numpy as np

MASK32 = 0xFFFFFFFF
PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
TWO_PI = 6.283185307179586
INV_2_52 = 2.0 ** -52

# stream tags
TAG_PARTICLE = 1
TAG_MIGRATE = 2
TAG_DIFFUSION = 3
TAG_KAPPA = 4
TAG_KAPPA_TARGET = 5
TAG_ALPHA = 6
TAG_TAU = 7


def split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed & MASK32, (seed >> 32) & MASK32


def philox4x32(counter, key):
    """Philox4x32 with 10 rounds on Python ints; returns four 32-bit words."""
    c0, c1, c2, c3 = counter
    k0, k1 = key
    for _ in range(10):
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        c0, c1, c2, c3 = (((p1 >> 32) ^ c1 ^ k0) & MASK32, p1 & MASK32,
                          ((p0 >> 32) ^ c3 ^ k1) & MASK32, p0 & MASK32)
        k0 = (k0 + PHILOX_W0) & MASK32
        k1 = (k1 + PHILOX_W1) & MASK32
    return c0, c1, c2, c3


def _u52(hi, lo):
    return (((hi << 20) | (lo >> 12)) + 0.5) * INV_2_52


def uniform_pair(seed: int, replicate: int, tag: int, index: int, sub: int = 0):
    """Two uniforms in the open interval (0, 1) from one Philox block."""
    w = philox4x32((replicate & MASK32, (tag | (sub << 8)) & MASK32,
                    index & MASK32, (index >> 32) & MASK32), split_seed(seed))
    return _u52(w[0], w[1]), _u52(w[2], w[3])


def normal(seed: int, replicate: int, tag: int, index: int, sub: int = 0) -> float:
    """One standard normal via Box-Muller on a single Philox block."""
    u1, u2 = uniform_pair(seed, replicate, tag, index, sub)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


# ---------------------------------------------------------------- vectorised

def philox4x32_np(c0, c1, c2, c3, k0: int, k1: int):
    """Vectorised Philox4x32-10; counters are uint64 arrays holding 32-bit words."""
    c0 = np.asarray(c0, dtype=np.uint64)
    c1 = np.asarray(c1, dtype=np.uint64)
    c2 = np.asarray(c2, dtype=np.uint64)
    c3 = np.asarray(c3, dtype=np.uint64)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    m0 = np.uint64(PHILOX_M0)
    m1 = np.uint64(PHILOX_M1)
    mask = np.uint64(MASK32)
    s32 = np.uint64(32)
    for _ in range(10):
        p0 = m0 * c0
        p1 = m1 * c2
        c0, c1, c2, c3 = ((p1 >> s32) ^ c1 ^ np.uint64(k0),
                          p1 & mask,
                          (p0 >> s32) ^ c3 ^ np.uint64(k1),
                          p0 & mask)
        k0 = (k0 + PHILOX_W0) & MASK32
        k1 = (k1 + PHILOX_W1) & MASK32
    return c0, c1, c2, c3


def _u52_np(hi, lo):
    k = (hi << np.uint64(20)) | (lo >> np.uint64(12))
    return (k.astype(np.float64) + 0.5) * INV_2_52


def uniforms_np(seed: int, replicates, tag: int, index, sub=0):
    """Uniform pairs for broadcastable arrays of replicate and draw index."""
    k0, k1 = split_seed(seed)
    rep = np.asarray(replicates, dtype=np.uint64) & np.uint64(MASK32)
    idx = np.asarray(index, dtype=np.uint64)
    c1 = (np.uint64(tag) | (np.asarray(sub, dtype=np.uint64) << np.uint64(8))) & np.uint64(MASK32)
    w0, w1, w2, w3 = philox4x32_np(rep, c1, idx & np.uint64(MASK32), idx >> np.uint64(32), k0, k1)
    return _u52_np(w0, w1), _u52_np(w2, w3)


def normals_np(seed: int, replicates, tag: int, index, sub=0) -> np.ndarray:
    """Standard normals for broadcastable arrays of replicate and draw index."""
    u1, u2 = uniforms_np(seed, replicates, tag, index, sub)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


class CounterStream:
    """Stateless handle on one (seed, replicate, tag) stream."""

    def __init__(self, seed: int, replicate: int = 0, tag: int = TAG_PARTICLE):
        split_seed(seed)
        self.seed = int(seed)
        self.replicate = int(replicate)
        self.tag = int(tag)

    def uniform_pair(self, index: int, sub: int = 0):
        return uniform_pair(self.seed, self.replicate, self.tag, index, sub)

    def normal(self, index: int, sub: int = 0) -> float:
        return normal(self.seed, self.replicate, self.tag, index, sub)

    def __repr__(self):
        return f"CounterStream(seed={self.seed}, replicate={self.replicate}, tag={self.tag})"
