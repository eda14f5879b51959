"""Replayable randomness for the loss network.

The world is four independent sequences of unit-mean exponential variates:
inter-arrival variates for the H and L classes and service variates for the
H and L classes.  Every variate is a pure function of ``(seed, stream,
index)``, generated by a counter-based Philox generator, so a lookahead
oracle can read arbitrarily far ahead of the live simulation without
perturbing it.

Variates are materialised lazily in fixed-size blocks and memoised.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = ["StreamId", "SamplePath", "Cursor", "new_sample_path", "value_at", "draw_next"]

BLOCK_BITS = 12
BLOCK_SIZE = 1 << BLOCK_BITS
_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53


class StreamId(enum.IntEnum):
    AH = 0
    AL = 1
    SH = 2
    SL = 3


class SamplePath:
    """Four lazily extended Exp(1) sequences keyed by a 64-bit seed.

    ``value_at`` never depends on the order in which indices are requested.
    ``high_water`` records the largest index ever requested per stream, which
    is how tests audit how far a policy looked ahead.
    """

    def __init__(self, seed: int, block_bits: int = BLOCK_BITS):
        self.seed = int(seed) & _MASK64
        self.block_bits = int(block_bits)
        self.block_size = 1 << self.block_bits
        self._mask = self.block_size - 1
        self._blocks: list[dict[int, list[float]]] = [{} for _ in StreamId]
        self.high_water = [-1, -1, -1, -1]

    def _materialize(self, stream: int, block: int) -> list[float]:
        # Counter = (0, block, 0, 0); Philox only increments word 0 inside a
        # block, so blocks never overlap as long as block_size < 2**66.
        bitgen = np.random.Philox(key=[self.seed, int(stream)], counter=[0, block, 0, 0])
        raw = bitgen.random_raw(self.block_size)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
        values = (-np.log(u)).tolist()
        self._blocks[stream][block] = values
        return values

    def value_at(self, stream: int, index: int) -> float:
        if index > self.high_water[stream]:
            self.high_water[stream] = index
        values = self._blocks[stream].get(index >> self.block_bits)
        if values is None:
            values = self._materialize(stream, index >> self.block_bits)
        return values[index & self._mask]

    def values(self, stream: int, start: int, stop: int) -> np.ndarray:
        """Vector of ``value_at(stream, j)`` for ``start <= j < stop``."""
        return np.array([self.value_at(stream, j) for j in range(start, stop)])

    def realized_len(self, stream: int) -> int:
        """Number of variates materialised so far (whole blocks)."""
        return len(self._blocks[stream]) * self.block_size

    def __repr__(self) -> str:
        return f"SamplePath(seed={self.seed})"


@dataclass
class Cursor:
    """Next unconsumed index per stream."""

    index: list[int] = field(default_factory=lambda: [0, 0, 0, 0])

    def snapshot(self) -> "Cursor":
        return Cursor(list(self.index))

    def __getitem__(self, stream: int) -> int:
        return self.index[stream]


def new_sample_path(seed: int) -> SamplePath:
    return SamplePath(seed)


def value_at(path: SamplePath, stream: StreamId, index: int) -> float:
    if index < 0:
        raise IndexError(f"negative variate index {index}")
    return path.value_at(stream, index)


def draw_next(cursor: Cursor, path: SamplePath, stream: StreamId) -> float:
    """Return the variate under ``cursor`` and advance that stream by one."""
    j = cursor.index[stream]
    cursor.index[stream] = j + 1
    return path.value_at(stream, j)
