"""splitmix64 generator shared by data generation and parameter init.

splitmix64 is counter based (output k depends only on ``seed + k*GAMMA``), so
blocks of outputs are produced with vectorised uint64 arithmetic that wraps
exactly like the scalar recurrence.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def _mix_scalar(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Rng64:
    """64-bit splitmix stream."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return _mix_scalar(self.state)

    def next_block(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as a uint64 array; advances the state by ``n``."""
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * np.uint64(GAMMA)
            out = _mix_array(z)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def below(self, n: int) -> int:
        """Integer in [0, n) by modulo reduction."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.next() % n

    def uniform(self) -> float:
        """Double in the open interval (0, 1)."""
        return ((self.next() >> 11) + 0.5) * _INV_2_53

    def uniform_block(self, n: int) -> np.ndarray:
        return ((self.next_block(n) >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53

    def normal_block(self, n: int) -> np.ndarray:
        """``n`` standard normals by Box-Muller over consecutive uniform pairs."""
        m = (n + 1) // 2
        u = self.uniform_block(2 * m)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * math.pi * u2)
        z[1::2] = r * np.sin(2.0 * math.pi * u2)
        return z[:n]


def rng_next(rng: Rng64) -> int:
    return rng.next()


def derive_seed(seed: int, key: str) -> int:
    """Independent sub-stream seed for ``key`` (stable across platforms)."""
    h = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")
    return _mix_scalar((int(seed) ^ h) & MASK64)
