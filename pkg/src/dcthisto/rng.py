"""Counter-based random number generation.

Every draw is a pure function of ``(seed, counter)``: the i-th 64-bit word is
``splitmix64_mix(seed + (counter + i + 1) * GOLDEN)``, which reproduces the
reference SplitMix64 stream for a given seed. No platform RNG is involved, so
sequences are identical everywhere numpy's uint64 arithmetic is available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


@dataclass
class RngState:
    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed &= _MASK
        self.counter &= _MASK

    def words(self, n: int) -> np.ndarray:
        """Return ``n`` raw uint64 draws and advance the counter by ``n``."""
        idx = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(self.counter)
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * np.uint64(GOLDEN)
        self.counter = (self.counter + n) & _MASK
        return _mix(state)

    def split(self, stream: int | str) -> "RngState":
        """Derive an independent generator; does not advance this one."""
        if isinstance(stream, str):
            key = 0
            for b in stream.encode():
                key = _mix_int((key * 131 + b) & _MASK)
            stream = key
        return RngState(_mix_int((self.seed ^ _mix_int(stream & _MASK)) & _MASK))

    def random(self, shape) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.words(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(shape)

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got lo={lo}, hi={hi}")
        x = lo + (hi - lo) * self.random(shape)
        return np.minimum(x, np.nextafter(hi, lo))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1]
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return std * z[:n].reshape(shape)

    def truncated_normal(self, shape, std: float = 1.0, bound: float = 2.0) -> np.ndarray:
        """Normal draws restricted to ``[-bound*std, bound*std]`` by resampling."""
        shape = _as_shape(shape)
        z = self.normal(shape).ravel()
        bad = np.abs(z) > bound
        while bad.any():
            z[bad] = self.normal(int(bad.sum()))
            bad = np.abs(z) > bound
        return std * z.reshape(shape)

    def integers(self, n: int, high: int) -> np.ndarray:
        return np.floor(self.random(n) * high).astype(np.int64)

    def bernoulli(self, p: float) -> bool:
        return bool(self.random(1)[0] < p)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")


def _as_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def rand_uniform(rng: RngState, shape, lo: float, hi: float):
    """Uniform tensor on ``[lo, hi)``; advances ``rng``."""
    from .tensor import Tensor

    return Tensor(rng.uniform(shape, lo, hi))
