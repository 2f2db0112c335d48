"""Seeded random streams.

Every stochastic routine takes an integer seed and builds its own ``Rng``;
there is no global random state.  The word source is Philox4x64-10 (a
counter-based generator) keyed with ``splitmix64(seed)`` and started at
counter zero, so a stream is fully described by its seed.  Distribution
transforms live in ``_kernels`` and are fixed:

* uniform:  ``(word >> 11) * 2**-53``, in [0, 1)
* normal:   Box-Muller on consecutive word pairs, cosine branch first
* integers: ``floor(uniform * high)``
* permutation: stable argsort of ``n`` words
"""
from __future__ import annotations

import numpy as np

from popsyn import _kernels

MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 step: a bijective 64-bit mixer."""
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master, *parts):
    """Fold integer ``parts`` into ``master`` with splitmix64.

    ``derive_seed(m, a, b) == splitmix64(splitmix64(splitmix64(m) ^ a) ^ b)``
    with all values taken modulo 2**64.
    """
    h = splitmix64(int(master) & MASK64)
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


class Rng:
    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self._bitgen = np.random.Philox(key=splitmix64(self.seed))

    def raw(self, n):
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        return np.asarray(self._bitgen.random_raw(int(n)), dtype=np.uint64)

    def uniform(self, size=()):
        shape = _shape(size)
        return _kernels.uniform(self.raw(_count(shape))).reshape(shape)

    def normal(self, size=()):
        shape = _shape(size)
        m = _count(shape)
        words = self.raw(m + (m & 1))
        return _kernels.box_muller(words)[:m].reshape(shape)

    def integers(self, high, size=()):
        if high < 1:
            raise ValueError("high must be >= 1")
        u = self.uniform(size)
        return np.minimum(np.floor(u * high).astype(np.int64), high - 1)

    def permutation(self, n):
        return np.argsort(self.raw(n), kind="stable").astype(np.int64)


def _shape(size):
    if isinstance(size, (int, np.integer)):
        return (int(size),)
    return tuple(int(s) for s in size)


def _count(shape):
    c = 1
    for s in shape:
        c *= s
    return c
