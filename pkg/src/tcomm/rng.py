"""Seeded random streams.

Every consumer of randomness (dataset generation, weight init, dropout,
channel noise, attacks, ...) gets its own generator derived from
``(seed, stream id, *extra keys)`` through :class:`numpy.random.SeedSequence`
and the PCG64 bit generator. Both are specified algorithms, so a given key
reproduces the same sequence on every platform, and turning one consumer on
or off never shifts another consumer's draws.
"""

from __future__ import annotations

import numpy as np

# stable stream ids; never renumber, only append
STREAMS = {
    "dataset": 0,
    "init": 1,
    "dropout": 2,
    "channel": 3,
    "attack": 4,
    "shuffle": 5,
    "poison": 6,
    "eval_channel": 7,
    "label_shuffle": 8,
}


def make_rng(seed: int, stream: str | int, *keys: int) -> np.random.Generator:
    sid = STREAMS[stream] if isinstance(stream, str) else int(stream)
    ss = np.random.SeedSequence(int(seed), spawn_key=(sid, *(int(k) for k in keys)))
    return np.random.Generator(np.random.PCG64(ss))


class RngStreams:
    """Lazily created named streams sharing one master seed."""

    def __init__(self, seed: int, *keys: int):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        self._cache: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        gen = self._cache.get(name)
        if gen is None:
            gen = self._cache[name] = make_rng(self.seed, name, *self.keys)
        return gen

    def child(self, *keys: int) -> "RngStreams":
        return RngStreams(self.seed, *self.keys, *keys)
