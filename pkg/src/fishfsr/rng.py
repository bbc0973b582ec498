"""Deterministic splitmix64 random source.

Every draw advances the 64-bit state by the golden-ratio increment and
mixes it; vectorised draws are exactly equivalent to the same number of
scalar draws. Derived distributions:

* ``uniform``: ``(z >> 11) * 2**-53`` in [0, 1), then affinely mapped.
* ``normal``: Box-Muller on two consecutive uniforms ``u1, u2`` with
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``.
* ``randbelow``: ``floor(u * n)`` from one uniform.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 generator; identical seeds give identical sequences."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * _GAMMA
            out = _mix(states)
        self.state = (self.state + n * int(_GAMMA)) & _MASK
        return out

    def random(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.random((n, 2))
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        z = mean + std * z
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def randbelow(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self) -> "Rng":
        """Child generator seeded from one draw of this one."""
        return Rng(int(self.next_u64(1)[0]))
