"""Dense float64 primitives and the seeded generator used everywhere else.

Vectors and matrices are plain numpy arrays (row-major, float64).  The
functions here add the shape checks the cell code relies on and fix the
numerically safe forms of the activations.

The random generator is numpy's PCG64 bit generator driven through
``numpy.random.Generator``.  PCG64's output stream is specified by the
algorithm, not the platform, so a seed replays identically everywhere.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def as_vector(values) -> np.ndarray:
    return np.asarray(values, dtype=DTYPE).reshape(-1)


def as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=DTYPE)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def matvec(W, x) -> np.ndarray:
    """Return ``W @ x``; raises when ``W.cols != len(x)``."""
    W = as_matrix(W)
    x = as_vector(x)
    if W.shape[1] != x.shape[0]:
        raise ValueError(f"matvec shape mismatch: W is {W.shape[0]}x{W.shape[1]}, x has length {x.shape[0]}")
    return W @ x


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def concat(a, b) -> np.ndarray:
    """Join along the last axis; ``a`` occupies the leading slots."""
    return np.concatenate([np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)], axis=-1)


def sigmoid(x) -> np.ndarray:
    # tanh form: no exp overflow at |x| ~ 1e3 and sigmoid(x) + sigmoid(-x) == 1 to rounding
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=DTYPE)))


def tanh(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=DTYPE))


class Rng:
    """Seeded PCG64 stream.  Single owner; do not share across threads."""

    ALGORITHM = "PCG64"

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, lo: float, hi: float, size=None) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform range requires lo < hi, got lo={lo}, hi={hi}")
        return self._gen.uniform(lo, hi, size)

    def integers(self, lo: int, hi: int, size=None) -> np.ndarray:
        return self._gen.integers(lo, hi, size)

    def spawn(self, key: int) -> "Rng":
        """Independent child stream derived from (seed, key), not from the current position."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(key,))))
        return child

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def rand_uniform(rng: Rng, lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` draws from [lo, hi)."""
    return rng.uniform(lo, hi, int(n)).astype(DTYPE)
