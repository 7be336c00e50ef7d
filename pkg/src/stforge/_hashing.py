"""Deterministic 64-bit hashing primitives shared across the package.

Everything here is pure and process-independent: no salted builtin hash(),
no global RNG state. All randomness anywhere in the package bottoms out in
either splitmix64 streams or keyed blake2b digests.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_NP_MIX1 = np.uint64(_MIX1)
_NP_MIX2 = np.uint64(_MIX2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns (output, next_state)."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return (z ^ (z >> 31)) & MASK64, state


def mix64(x: int) -> int:
    """The splitmix64 finalizer: a bijective 64-bit mixing permutation."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & MASK64
    return (x ^ (x >> 31)) & MASK64


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over a uint64 array (wrapping arithmetic)."""
    x = (x ^ (x >> _S30)) * _NP_MIX1
    x = (x ^ (x >> _S27)) * _NP_MIX2
    return x ^ (x >> _S31)


def stable_hash64(data: bytes, key: bytes = b"") -> int:
    """Process-independent 64-bit hash of a byte string (blake2b-8)."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8, key=key).digest(), "little")


def derive_seed(seed: int, *labels: str) -> int:
    """Derive a child 64-bit seed from a root seed and a path of labels."""
    key = (seed & MASK64).to_bytes(8, "little")
    h = hashlib.blake2b(digest_size=8, key=key)
    for label in labels:
        h.update(label.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


class SplitMix:
    """A splitmix64 value stream seeded from (seed, *labels).

    Streams with distinct label paths are statistically independent, which
    keeps per-entity randomness stable when unrelated entities are added.
    """

    def __init__(self, seed: int, *labels: str):
        self._state = derive_seed(seed, *labels)

    def next_u64(self) -> int:
        value, self._state = splitmix64(self._state)
        return value

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        span = hi - lo + 1
        return lo + self.next_u64() % span

    def choice(self, seq):
        return seq[self.next_u64() % len(seq)]
