"""Deterministic, splittable pseudo-random streams.

All randomness in the package flows from one explicit 64-bit seed through
counter-based splitmix64 streams.  The algorithm is small enough to state
exactly, so a port in any language can reproduce every stream bit for bit:

  mix64(z):   z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
              z ^= z >> 27;  z *= 0x94D049BB133111EB
              z ^= z >> 31                       (all mod 2**64)
  stream(seed) draws the sequence  mix64(seed + i * 0x9E3779B97F4A7C15)
              for i = 1, 2, 3, ...
  split(seed, name) = mix64(mix64(seed) ^ fnv1a64(name))

Uniform doubles take the top 53 bits: u = (x >> 11) * 2**-53, giving
values in [0, 1).  Normals use the Box-Muller transform on consecutive
pairs, with the first uniform shifted into (0, 1] so log never sees zero.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def fnv1a64(name: str) -> int:
    h = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def split(seed: int, name: str) -> int:
    """Derive an independent child seed keyed by a stream name."""
    return mix64(mix64(seed) ^ fnv1a64(name))


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Rng:
    """A single splitmix64 stream with vectorized draws."""

    def __init__(self, seed: int):
        self._seed = seed & _MASK
        self._counter = 0

    def split(self, name: str) -> "Rng":
        """Child stream keyed by name; independent of draw order on self."""
        return Rng(split(self._seed, name))

    def next_u64(self) -> int:
        self._counter += 1
        return mix64((self._seed + self._counter * _GOLDEN) & _MASK)

    def _u64_array(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        raw = np.uint64(self._seed) + idx * np.uint64(_GOLDEN)
        return _mix64_array(raw)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = (self._u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + (high - low) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        raw = (self._u64_array(2 * pairs) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1 = raw[:pairs] + 2.0**-53  # shift into (0, 1]
        u2 = raw[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        out = std * z
        return out.reshape(shape) if shape else float(out[0])

    def trunc_normal(self, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
        """Normal(0, std) with rejection outside +/- bound*std."""
        n = int(np.prod(shape))
        out = self.normal((n,), std=std)
        limit = bound * std
        bad = np.abs(out) > limit
        while bad.any():
            out[bad] = self.normal((int(bad.sum()),), std=std)
            bad = np.abs(out) > limit
        return out.reshape(shape)

    def integers(self, n: int, shape=()) -> np.ndarray:
        """Uniform integers in [0, n) as floor(u * n)."""
        count = int(np.prod(shape)) if shape else 1
        u = (self._u64_array(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = np.floor(u * n).astype(np.int64)
        return out.reshape(shape) if shape else int(out[0])

    def choice(self, n: int) -> int:
        return self.integers(n)
