"""
Seeded random streams.

A splitmix64 counter stream; normals come from Box–Muller pairs. Streams for
a particular purpose are derived statelessly from (seed, keys...) so that any
point of a run can be reproduced without carrying generator state around.
"""

import math
import zlib
from typing import Tuple, Union

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))


def _key_to_int(key: Union[int, str]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & _MASK


class Rng:
    """
    splitmix64 stream with vectorized draws.

    Same seed ⇒ same sequence of draws. Raw 64-bit draws do not depend on
    how they are chunked.
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK

    @classmethod
    def derive(cls, seed: int, *keys: Union[int, str]) -> "Rng":
        """
        Independent stream for a purpose, e.g. ``Rng.derive(seed, "epoch", 3)``.
        """
        state = _mix_int(int(seed) ^ _GOLDEN)
        for key in keys:
            state = _mix_int(state ^ _mix_int(_key_to_int(key) + _GOLDEN))
        return cls(state)

    @property
    def state(self) -> int:
        return self._state

    def next_u64(self, n: int) -> np.ndarray:
        """Draw n raw 64-bit outputs."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + steps * np.uint64(_GOLDEN)
        self._state = (self._state + n * _GOLDEN) & _MASK
        return _mix_array(z)

    def uniform(self, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
        """Float64 uniforms in [0, 1)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        bits = self.next_u64(count) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)

    def normal(
        self,
        shape: Union[int, Tuple[int, ...]],
        std: float = 1.0,
        mean: float = 0.0,
        dtype: np.dtype = np.float32,
    ) -> np.ndarray:
        """Gaussian draws via Box–Muller."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        pairs = (count + 1) // 2
        u1 = 1.0 - self.uniform(pairs)
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).ravel()
        return (z[:count] * std + mean).reshape(shape).astype(dtype)

    def integers(self, high: int, n: int) -> np.ndarray:
        """n integers in [0, high)."""
        if high <= 0:
            raise ValueError("high must be positive")
        return (self.next_u64(n) % np.uint64(high)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n)."""
        if k > n:
            raise ValueError(f"cannot choose {k} of {n} without replacement")
        return self.permutation(n)[:k]
