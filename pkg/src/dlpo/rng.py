"""Portable pseudo-random generator used for every stochastic decision.

Runs must reproduce bit-for-bit across platforms and interpreter versions,
so instead of ``random.Random`` (whose helper methods may change between
Python releases) this module implements xoshiro256** seeded via splitmix64.
Both algorithms are public-domain and defined purely over 64-bit integer
arithmetic, which Python emulates exactly.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Derive an independent 64-bit sub-seed for a named stream index.

    Used to split one run seed into dataset-sampling and optimizer streams
    that can be reconstructed independently at resume time.
    """
    state = (seed ^ (0xA076_1D64_78BD_642F * (stream + 1))) & _MASK64
    _, out = _splitmix64(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class PortableRng:
    """xoshiro256** generator with an explicit, serializable state."""

    def __init__(self, seed: int):
        self._s = []
        state = seed & _MASK64
        for _ in range(4):
            state, word = _splitmix64(state)
            self._s.append(word)

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

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling (unbiased)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, population: int, k: int) -> list[int]:
        """k distinct indices from range(population), in draw order."""
        if not 0 <= k <= population:
            raise ValueError("sample size out of range")
        pool = list(range(population))
        picked = []
        for i in range(k):
            j = i + self.randbelow(population - i)
            pool[i], pool[j] = pool[j], pool[i]
            picked.append(pool[i])
        return picked

    def gauss(self) -> float:
        """Standard normal via Box-Muller (two uniform draws per call)."""
        u1 = self.random()
        while u1 == 0.0:
            u1 = self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def weighted_choice(self, weights: list[float]) -> int:
        """Index drawn proportionally to non-negative weights (one draw)."""
        total = float(sum(weights))
        if total <= 0.0:
            raise ValueError("weights must have positive sum")
        r = self.random() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if r < acc:
                return i
        return len(weights) - 1

    def getstate(self) -> list[int]:
        return list(self._s)

    def setstate(self, state: list[int]) -> None:
        if len(state) != 4:
            raise ValueError("xoshiro256 state must be 4 words")
        self._s = [w & _MASK64 for w in state]
