"""Deterministic seeded randomness.

The generator is SplitMix64: output n of a stream with seed s is

    mix64(s + (n + 1) * GAMMA)  mod 2**64

where GAMMA is the 64-bit golden ratio and mix64 is the murmur-style
finalizer (xor-shift / multiply, constants 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB). Being a pure function of (seed, counter), the stream
is identical on every platform and can be split without shared state:
``child(key)`` reseeds a fresh stream with mix64((seed ^ CHILD_SALT) +
(key + 1) * GAMMA), so children with distinct keys never correlate with
the parent stream or each other.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
CHILD_SALT = 0x6A09E667F3BCC909

ALGORITHM = "splitmix64"


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based 64-bit generator, single-owner by convention.

    Parallel work should not share one instance; derive per-task streams
    with :meth:`child` instead.
    """

    algorithm = ALGORITHM

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self._counter = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed:#x}, drawn={self._counter})"

    def next_u64(self) -> int:
        self._counter += 1
        return mix64(self.seed + self._counter * GAMMA)

    def next_float(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = MASK64 + 1 - ((MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def next_normal(self) -> float:
        """Standard normal draw (Box-Muller, cosine branch).

        Consumes exactly two uniforms per call so the stream position does
        not depend on earlier calls.
        """
        u1 = self.next_float()
        u2 = self.next_float()
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        return r * math.cos(2.0 * math.pi * u2)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), by partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.next_below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def child(self, key: int) -> "Rng":
        """Independent stream derived from (seed, key)."""
        return Rng(mix64(((self.seed ^ CHILD_SALT) + (key + 1) * GAMMA) & MASK64))
