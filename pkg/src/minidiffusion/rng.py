"""Seedable random source: a splitmix64 counter stream with Box-Muller normals.

Every draw is a pure function of (seed, draw index), so a stream can be
vectorized, replayed bit-for-bit, and checkpointed by storing one 64-bit
state word.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = float(2.0**-53)


def _mix(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """splitmix64 finalizer: bijective avalanche over uint64 (wraps mod 2^64)."""
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


def _size_of(shape: int | tuple[int, ...]) -> tuple[tuple[int, ...], int]:
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative extent in shape {shape}")
    n = 1
    for s in shape:
        n *= s
    return shape, n


class Rng:
    """Deterministic 64-bit random stream. Not thread-safe; one owner at a time."""

    def __init__(self, seed: int):
        self._state = np.uint64(int(seed) & _MASK64)

    @property
    def state(self) -> int:
        """Current stream position, storable in checkpoints."""
        return int(self._state)

    @state.setter
    def state(self, value: int) -> None:
        self._state = np.uint64(int(value) & _MASK64)

    def fork(self, tag: int) -> "Rng":
        """Derive an independent child stream; this stream is not advanced."""
        with np.errstate(over="ignore"):
            child = _mix(self._state ^ _mix(np.uint64(int(tag) & _MASK64) + _GAMMA))
        return Rng(int(child))

    def _words(self, n: int) -> np.ndarray:
        """Next n raw uint64 words; advances the stream by n."""
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            idx = np.arange(1, n + 1, dtype=np.uint64)
            words = _mix(self._state + idx * _GAMMA)
            self._state = self._state + np.uint64(n) * _GAMMA
        return words

    def uniform(self, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """i.i.d. float64 uniforms in [0, 1)."""
        shape, n = _size_of(shape)
        u = (self._words(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape)

    def standard_normal(self, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """i.i.d. float64 standard normals via the Box-Muller transform."""
        shape, n = _size_of(shape)
        if n == 0:
            return np.empty(shape, dtype=np.float64)
        pairs = (n + 1) // 2
        w = self._words(2 * pairs)
        # u1 in (0, 1] keeps the log finite; u2 in [0, 1).
        u1 = ((w[:pairs] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _INV_2_53
        u2 = (w[pairs:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:n].reshape(shape)

    def randint(self, low: int, high: int, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """i.i.d. int64 integers uniform over [low, high)."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        shape, n = _size_of(shape)
        span = np.uint64(high - low)
        # Modulo bias is O(span / 2^64): immaterial for the ranges used here.
        vals = (self._words(n) % span).astype(np.int64) + np.int64(low)
        return vals.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """A uniformly random permutation of range(n)."""
        keys = self._words(int(n))
        return np.argsort(keys, kind="stable").astype(np.int64)
