"""Keyed random streams for schedule-independent parallel sampling.

Every stream is a Philox counter-based generator whose 128-bit key packs the
master seed together with ``(epoch, island, role)``. Distinct keys give
independent streams and the same key always replays the same sequence, so the
order in which islands are processed (or the number of workers doing it) never
changes a result.
"""

from enum import IntEnum

import numpy as np

_MASK64 = (1 << 64) - 1
_MAX_EPOCH = 1 << 32
_MAX_ISLAND = 1 << 24
_MAX_ROLE = 1 << 8


class Role(IntEnum):
    """Purpose tags separating the streams used within one step."""

    INITIAL = 0
    ISLAND_SELECTION = 1
    INDIVIDUAL_SELECTION = 2
    MUTATION = 3
    SIMULATION = 4
    SYNTHETIC = 5


class RngStream:
    """Random stream identified by ``master_seed`` and ``(epoch, island, role)``.

    Draws are consumed sequentially, so two calls ``random(3)`` return the
    same numbers as one call ``random(6)``.

    Parameters
    ----------
    master_seed : int
        Seed of the whole run; reduced modulo 2**64.
    epoch : int
        Step index.
    island : int
        Island index (0 for global operations).
    role : int or Role
        Operation tag.
    """

    __slots__ = ("master_seed", "epoch", "island", "role", "_gen")

    def __init__(self, master_seed, epoch=0, island=0, role=0):
        epoch, island, role = int(epoch), int(island), int(role)
        if not 0 <= epoch < _MAX_EPOCH:
            raise ValueError(f"epoch out of range: {epoch}")
        if not 0 <= island < _MAX_ISLAND:
            raise ValueError(f"island index out of range: {island}")
        if not 0 <= role < _MAX_ROLE:
            raise ValueError(f"role out of range: {role}")
        self.master_seed = int(master_seed) & _MASK64
        self.epoch = epoch
        self.island = island
        self.role = role
        key = np.array(
            [self.master_seed, (epoch << 32) | (island << 8) | role], dtype=np.uint64
        )
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def key(self):
        return (self.epoch, self.island, self.role)

    def random(self, size=None):
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def __repr__(self):
        return (
            f"RngStream(master_seed={self.master_seed}, epoch={self.epoch}, "
            f"island={self.island}, role={self.role})"
        )


def island_streams(master_seed, epoch, role, m1):
    """One stream per island for a given step and role."""
    return [RngStream(master_seed, epoch, i, role) for i in range(m1)]
