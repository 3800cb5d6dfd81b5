"""Deterministic 64-bit PRNG used for every stochastic choice in the package.

The generator is xoshiro256** seeded via splitmix64, both implemented here
bit-exactly so that any consumer (or reimplementation in another language)
reproduces identical streams from the same seed.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_SPLITMIX_MUL1 = 0xBF58476D1CE4E5B9
_SPLITMIX_MUL2 = 0x94D049BB133111EB


def splitmix64_stream(seed: int, count: int) -> list[int]:
    """First `count` outputs of splitmix64 starting from state `seed`."""
    state = seed & _MASK64
    out = []
    for _ in range(count):
        state = (state + _SPLITMIX_GAMMA) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * _SPLITMIX_MUL1) & _MASK64
        z = ((z ^ (z >> 27)) * _SPLITMIX_MUL2) & _MASK64
        out.append(z ^ (z >> 31))
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256:
    """xoshiro256** generator; state expanded from a 64-bit seed by splitmix64."""

    def __init__(self, seed: int):
        self._s = splitmix64_stream(seed, 4)

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        size = int(np.prod(shape))
        u = self.uniforms(size).reshape(shape)
        return low + (high - low) * u

    def normals(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller; pairs consumed in stream order."""
        out = np.empty(n, dtype=np.float64)
        for i in range(0, n, 2):
            u1 = 1.0 - self.uniform()  # (0, 1]
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < n:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
        return out

    def normal_array(self, shape) -> np.ndarray:
        return self.normals(int(np.prod(shape))).reshape(shape)

    def randint(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection over the masked draw."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        mask = (1 << bound.bit_length()) - 1
        while True:
            v = self.next_u64() & mask
            if v < bound:
                return v

    def shuffle(self, values: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(values) - 1, 0, -1):
            j = self.randint(i + 1)
            values[i], values[j] = values[j], values[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        self.shuffle(idx)
        return np.array(idx, dtype=np.int64)
