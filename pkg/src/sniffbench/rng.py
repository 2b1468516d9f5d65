"""Platform-independent pseudo-random numbers.

Every stochastic step in the package (synthetic data, holdout splits, weight
init, epoch shuffles, SMO tie breaking) draws from :class:`SplitMix64`, so a
seed reproduces the same bytes on any machine with IEEE-754 doubles.

SplitMix64 (Steele, Lea & Flood 2014) advances a 64-bit counter by the golden
gamma ``0x9E3779B97F4A7C15`` and emits it through the xorshift-multiply
finalizer::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Because the state is a counter, blocks of draws vectorize in numpy with no
change in the output sequence.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *labels: object) -> int:
    """Stable 64-bit sub-seed for a named sub-stream (e.g. ``("svm", 3)``)."""
    text = repr((int(seed) & MASK64,) + tuple(str(x) for x in labels))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            out = _mix(z)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return out

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def uniform(self, size: int | tuple[int, ...] = 1, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Doubles in ``[low, high)`` built from the top 53 bits of each draw."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * u).reshape(shape)

    def normal(self, size: int | tuple[int, ...] = 1) -> np.ndarray:
        # Box-Muller, cosine branch only. Scalar ``math`` calls rather than
        # numpy ufuncs: numpy may dispatch to SIMD kernels whose last-ulp
        # results differ between CPUs.
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = self.uniform(2 * n).tolist()
        log, cos, sqrt, two_pi = math.log, math.cos, math.sqrt, 2.0 * math.pi
        out = [sqrt(-2.0 * log(1.0 - u[2 * i])) * cos(two_pi * u[2 * i + 1]) for i in range(n)]
        return np.asarray(out, dtype=np.float64).reshape(shape)

    def below(self, bound: int) -> int:
        """Integer in ``[0, bound)`` by multiply-high (bias < bound / 2**64)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64() * bound) >> 64

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        if n < 2:
            return np.asarray(perm, dtype=np.int64)
        draws = [int(x) for x in self.u64(n - 1)]
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = (draws[step] * (i + 1)) >> 64
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)
