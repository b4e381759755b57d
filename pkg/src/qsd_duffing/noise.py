"""Counter-based complex Wiener increments.

The increment with index ``k`` of stream ``seed`` is a pure function of
``(seed, k)``: words ``2k`` and ``2k + 1`` of the Philox4x64 keystream keyed
by ``seed`` are mapped through Box-Muller to two independent standard normals,
which become the real and imaginary parts of ``d xi`` scaled by ``sqrt(dt/2)``.
Sharing a stream between two trajectories, replaying it, or generating it in
arbitrary chunks from any worker therefore gives bit-identical noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseStream", "sample_increment", "increments", "derive_seed"]

_TWO_POW_M53 = 2.0**-53
_MASK64 = (1 << 64) - 1


def increments(seed: int, counter: int, n: int, dt: float) -> np.ndarray:
    """Increments ``counter .. counter + n - 1`` of stream ``seed`` as complex128."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n == 0:
        return np.zeros(0, dtype=complex)
    block, skip = divmod(2 * int(counter), 4)
    gen = np.random.Philox(key=int(seed) & _MASK64, counter=block)
    words = gen.random_raw(2 * n + skip)[skip:]
    hi = words[0::2] >> np.uint64(11)
    lo = words[1::2] >> np.uint64(11)
    u1 = (hi.astype(np.float64) + 1.0) * _TWO_POW_M53  # (0, 1]
    u2 = lo.astype(np.float64) * _TWO_POW_M53  # [0, 1)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    return np.sqrt(dt / 2.0) * radius * (np.cos(angle) + 1j * np.sin(angle))


@dataclass
class NoiseStream:
    """A seeded noise realization plus the index of the next unused increment."""

    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        if self.counter < 0:
            raise ValueError("counter must be non-negative")

    def peek(self, n: int, dt: float) -> np.ndarray:
        return increments(self.seed, self.counter, n, dt)

    def take(self, n: int, dt: float) -> np.ndarray:
        out = self.peek(n, dt)
        self.counter += n
        return out

    def advance(self, n: int) -> None:
        self.counter += int(n)

    def copy(self) -> "NoiseStream":
        return NoiseStream(self.seed, self.counter)


def sample_increment(stream: NoiseStream, dt: float) -> complex:
    """Next increment of ``stream``; advances its counter by one."""
    return complex(stream.take(1, dt)[0])


def derive_seed(root_seed: int, index: int) -> int:
    """64-bit seed for work item ``index`` under ``root_seed``.

    Hashes ``(root_seed, index)`` through numpy's SeedSequence, which is
    platform-stable and independent of execution order.
    """
    ss = np.random.SeedSequence(entropy=int(root_seed) & _MASK64, spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
