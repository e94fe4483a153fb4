"""Portable deterministic random number generation for corpus synthesis.

The synthetic corpus must be bit-reproducible from its seeds, independently of
the Python/NumPy version in use, so the generator is pinned to a fixed, widely
documented algorithm (xoshiro256** with splitmix64 seeding) instead of NumPy's
default bit generator. Uniform doubles are formed from the top 53 bits of each
64-bit output; Gaussian deviates use the Box-Muller transform on those
uniforms. Any re-implementation that follows the same draw order reproduces
the corpus byte for byte.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_DOUBLE_SCALE = 2.0**-53


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once. Returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def combine_seeds(a: int, b: int) -> int:
    """Mix two integer seeds into one, order-sensitively.

    Used to derive per-session noise streams from (user_seed, session_seed)
    without the two streams ever colliding for distinct inputs in practice.
    """
    out, _ = splitmix64((splitmix64(a & _MASK64)[0] + (b & _MASK64)) & _MASK64)
    return out


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; used to turn labels into stable seeds."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


class Xoshiro256StarStar:
    """xoshiro256** generator with splitmix64 state initialization.

    Accepts any Python integer as seed (reduced mod 2^64). Draw-order
    contract: ``uniforms(n)`` consumes exactly n raw outputs; ``gaussians(n)``
    consumes exactly ``2 * ceil(n / 2)`` raw outputs (Box-Muller pairs).
    """

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            value, state = splitmix64(state)
            s.append(value)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        x = (s1 * 5) & _MASK64
        result = ((((x << 7) | (x >> 57)) & _MASK64) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """One double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in [0, 1). Hot loop kept local-variable only for speed."""
        s0, s1, s2, s3 = self._s
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            x = (s1 * 5) & _MASK64
            r = ((((x << 7) | (x >> 57)) & _MASK64) * 9) & _MASK64
            t = (s1 << 17) & _MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
            out[i] = (r >> 11) * _DOUBLE_SCALE
        self._s = [s0, s1, s2, s3]
        return out

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, n: int) -> int:
        """Integer in [0, n) via floor(uniform * n).

        The modulo-free construction keeps draw order one-uniform-per-call;
        the ~2^-53 selection bias is irrelevant at the corpus sizes used here.
        """
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order given by a partial shuffle."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randint(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def permutation(self, n: int) -> list[int]:
        return self.sample_indices(n, n)

    def gaussians(self, n: int) -> np.ndarray:
        """n standard normal deviates via Box-Muller.

        Pairs (u1, u2) are drawn in sequence; u1 is reflected to (0, 1] so the
        log is always finite. When n is odd the second member of the final
        pair is discarded (its uniforms are still consumed).
        """
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n]
