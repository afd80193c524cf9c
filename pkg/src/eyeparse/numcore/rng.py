"""Seeded random stream shared by dropout, initialisation and search."""

import numpy as np


class RngState:
    """A seeded generator that counts how many draws it has served.

    Identical seeds and identical call sequences give identical draws.
    """

    def __init__(self, seed=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.position = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def _tick(self, n=1):
        self.position += int(n)

    def random(self, size=None):
        self._tick(np.prod(size) if size is not None else 1)
        return self._gen.random(size)

    def uniform(self, low, high, size=None):
        self._tick(np.prod(size) if size is not None else 1)
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self._tick(np.prod(size) if size is not None else 1)
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        self._tick(np.prod(size) if size is not None else 1)
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        self._tick(n)
        return self._gen.permutation(n)

    def spawn(self):
        """Derive an independent child stream deterministically."""
        return RngState(int(self.integers(0, 2 ** 63 - 1)))
