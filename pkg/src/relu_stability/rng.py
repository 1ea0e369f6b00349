"""Seeded random streams.

Seed -> stream mapping: ``numpy.random.Philox(key=seed, counter=stream)``,
uniform doubles from ``Generator.random``. Normal variates are produced by
Box-Muller on consecutive uniform pairs of that stream, so a stream is fully
described by (seed, stream id) and does not depend on numpy's ziggurat.

Stream ids in use: 0 synthetic data, 1 binary subset sampling, 2 shallow
init, 3 two-layer init, 4 minibatch order, 5 minimum-gradient probes,
6 jittered pyramid grid, 7 pyramid perturbation, 8 weight-oracle samples,
9 random lines.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Stream:
    """A reproducible source of uniforms and Box-Muller normals."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        bitgen = np.random.Philox(key=self.seed, counter=[self.stream, 0, 0, 0])
        self._gen = np.random.Generator(bitgen)

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        pairs = (count + 1) // 2
        u = self._gen.random(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:count].reshape(shape)

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from range(n), uniformly, in sorted order."""
        # partial Fisher-Yates driven by this stream's uniforms
        idx = np.arange(n)
        u = self._gen.random(size)
        for i in range(size):
            j = i + int(u[i] * (n - i))
            idx[i], idx[j] = idx[j], idx[i]
        return np.sort(idx[:size])

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n)
        u = self._gen.random(n)
        for i in range(n - 1):
            j = i + int(u[i] * (n - i))
            idx[i], idx[j] = idx[j], idx[i]
        return idx
