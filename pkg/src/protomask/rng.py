"""Deterministic 64-bit PRNG used for every seeded operation.

The generator is splitmix64 (Steele/Lea/Flood), evaluated in counter mode:
output i of stream `seed` is mix64((seed + (i+1) * GOLDEN) mod 2^64). This
makes the scalar path and the numpy-vectorised path produce the identical
stream, which is what keeps sampling and synthesis bit-reproducible across
platforms. The exact algorithm is written out in docs/determinism.md.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 output function: shift-xor / multiply avalanche."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * MIX1) & MASK64
    x = ((x ^ (x >> 27)) * MIX2) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *salts: int) -> int:
    """Derive an independent sub-stream seed from (seed, salts).

    Used for restart sub-seeds, per-stage pipeline seeds, per-image seeds.
    """
    state = seed & MASK64
    for salt in salts:
        state = mix64((state + GOLDEN) ^ mix64(salt & MASK64))
    return state


class Splitmix64:
    """Counter-mode splitmix64 stream.

    next_u64() and fill_u64(n) draw from the same stream: interleaving
    scalar and vector calls is well defined and reproducible.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return mix64((self.seed + self.counter * GOLDEN) & MASK64)

    def fill_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            x = np.uint64(self.seed) + idx * np.uint64(GOLDEN)
            x = (x ^ (x >> np.uint64(30))) * np.uint64(MIX1)
            x = (x ^ (x >> np.uint64(27))) * np.uint64(MIX2)
            return x ^ (x >> np.uint64(31))

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 significant bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def fill_uniform(self, n: int) -> np.ndarray:
        return (self.fill_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection on the top of the range."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        limit = MASK64 + 1 - ((MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def sample_indices(self, n: int, m: int) -> list[int]:
        """m distinct indices from range(n), uniform without replacement.

        Partial Fisher-Yates; selection order is part of the contract.
        """
        if not 0 <= m <= n:
            raise ValueError(f"cannot sample {m} from {n}")
        pool = list(range(n))
        for i in range(m):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:m]

    def weighted_index(self, cumulative: np.ndarray) -> int:
        """Index drawn proportionally to weights, given their running sum.

        `cumulative` is a float64 left-to-right cumsum; total must be > 0.
        """
        total = float(cumulative[-1])
        if not total > 0.0:
            raise ValueError("weighted_index needs a positive total weight")
        target = self.uniform() * total
        return int(np.searchsorted(cumulative, target, side="right"))

    def fill_gaussian(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller on consecutive uniform pairs."""
        pairs = (n + 1) // 2
        u = self.fill_uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]: keeps log() finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]
