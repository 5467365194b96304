"""Counter-based random streams.

Every draw is a pure function of ``(master_seed, round_index, stream)``, so a
round can be replayed in isolation and blocks of rounds can be evaluated in any
order or on any number of workers without changing a single bit of the result.

Construction (all arithmetic modulo 2**64)::

    round_key = mix64(master_seed + GOLDEN * (round_index + 1))
    word      = mix64(round_key ^ mix64(stream + 1))
    uniform   = (word >> 11) * 2**-53            # in [0, 1)

``mix64`` is the SplitMix64 finalizer. The scalar helpers operate on Python
ints and the ``*_array`` helpers on ``numpy.uint64`` arrays; both produce
identical words.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 2.0**-53


class Stream(IntEnum):
    """Fixed stream slots, one per random decision in a round."""

    ALICE_BASIS = 0
    ALICE_BIT = 1
    BOB_BASIS = 2
    EMIT = 3
    EVE_GATE = 4
    EVE_BASIS = 5
    EVE_CLICK = 6
    CHANNEL = 7
    DET_EFFICIENCY = 8
    DET_OUTCOME = 9
    DET_JITTER = 10
    # DPS slot phases use DPS_PHASE + k, dark-count gates DARK_GATE + g.
    DPS_PHASE = 1 << 10
    DARK_GATE = 1 << 20


def mix64(x: int) -> int:
    x &= MASK64
    x ^= x >> 30
    x = (x * _M1) & MASK64
    x ^= x >> 27
    x = (x * _M2) & MASK64
    x ^= x >> 31
    return x


def mix64_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(_M1)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(_M2)
    x = x ^ (x >> np.uint64(31))
    return x


def round_key(master_seed: int, round_index: int) -> int:
    return mix64(master_seed + GOLDEN * (round_index + 1))


def round_keys(master_seed: int, start: int, stop: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.uint64) + np.uint64(1)
    base = np.uint64(master_seed & MASK64)
    with np.errstate(over="ignore"):
        return mix64_array(base + np.uint64(GOLDEN) * idx)


def uniform(master_seed: int, round_index: int, stream: int) -> float:
    word = mix64(round_key(master_seed, round_index) ^ mix64(stream + 1))
    return (word >> 11) * _INV_2_53


def uniform_array(keys: np.ndarray, stream: int) -> np.ndarray:
    """Uniform draws for one stream across a block of round keys."""
    word = mix64_array(keys ^ np.uint64(mix64(stream + 1)))
    return (word >> np.uint64(11)).astype(np.float64) * _INV_2_53


class RoundRandom:
    """Per-round random source handed to the device and protocol operations.

    Draws are addressed by stream, not consumed sequentially: asking for the
    same stream twice returns the same number.
    """

    __slots__ = ("master_seed", "round_index", "_key")

    def __init__(self, master_seed: int, round_index: int):
        if not 0 <= master_seed <= MASK64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if round_index < 0:
            raise ValueError("round_index must be non-negative")
        self.master_seed = master_seed
        self.round_index = round_index
        self._key = round_key(master_seed, round_index)

    def uniform(self, stream: int) -> float:
        return (mix64(self._key ^ mix64(stream + 1)) >> 11) * _INV_2_53

    def __repr__(self) -> str:
        return f"RoundRandom(master_seed={self.master_seed}, round_index={self.round_index})"
