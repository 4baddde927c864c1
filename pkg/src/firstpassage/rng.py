"""Reproducible random streams.

Streams are Philox-4x64 counter-based generators keyed by ``(seed, stream_id)``.
Replication blocks of one stream are carved out by setting the third counter
word to the block index, so block ``b`` is addressable without generating
blocks ``0..b-1`` first and blocks never overlap (each block would need
2**128 draws to run into the next).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= v <= _MASK64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {v}")

    def generator(self, block: int = 0) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        counter = np.array([0, 0, block, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def child(self, label: int | str) -> "RngStream":
        """An independent stream for a named sub-task."""
        if isinstance(label, str):
            h = 0
            for ch in label.encode():
                h = _splitmix64(h ^ ch)
            label = h
        return RngStream(self.seed, _splitmix64(self.stream_id ^ _splitmix64(int(label) & _MASK64)))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1)."""
    u = rng.random(size)
    bad = u == 0.0
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return u


def exponentials(rng: np.random.Generator, size) -> np.ndarray:
    """Unit exponentials by inversion, ``-log U`` with ``U`` in (0, 1)."""
    return -np.log(open_uniform(rng, size))


@njit(cache=True)
def nb_open_uniform(rng):
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


@njit(cache=True)
def nb_exponential(rng):
    return -np.log(nb_open_uniform(rng))
