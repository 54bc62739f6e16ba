"""Seeded random streams with deterministic splitting.

Every stochastic operation in the package takes an explicit RngStream.
Streams split by integer key, so concurrent evaluation of candidates and
particles draws from independent generators whose output depends only on
the master seed and the split path, never on evaluation order.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """A numpy Generator plus a deterministic split tree.

    ``split(*key)`` derives a child stream from the master entropy and the
    concatenated key path; repeated calls with the same key return streams
    producing bit-identical draws.
    """

    __slots__ = ("_entropy", "_path", "gen")

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self._entropy = int(seed)
        self._path = _path
        seq = np.random.SeedSequence(entropy=self._entropy, spawn_key=_path)
        self.gen = np.random.Generator(np.random.PCG64(seq))

    def split(self, *key: int) -> "RngStream":
        return RngStream(self._entropy, self._path + tuple(int(k) for k in key))

    # Convenience passthroughs for the common draws.
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self._entropy}, path={self._path})"
