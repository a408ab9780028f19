"""Named random substreams derived from a single run seed.

Each stream is keyed by its name rather than by creation order, so adding a
user or toggling a component never shifts the draws of another stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class Streams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            ss = np.random.SeedSequence(self.seed, spawn_key=(stream_key(name),))
            self._cache[name] = np.random.Generator(np.random.PCG64(ss))
        return self._cache[name]

    def fresh(self, name: str) -> np.random.Generator:
        """Uncached generator for ``name``, always starting from the beginning."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(stream_key(name),))
        return np.random.Generator(np.random.PCG64(ss))
