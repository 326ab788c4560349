"""Deterministic random streams.

Every Monte Carlo trial gets its own stream keyed by ``(master_seed, *labels,
trial_index)``, so ensemble results do not depend on scheduling or on how
trials are split between workers.  Compiled kernels use a xoshiro256**
generator whose 4-word state lives in a numpy array; vectorised numpy code
uses a ``numpy.random.Generator`` derived from the same key.
"""

from __future__ import annotations

import hashlib

import numba as nb
import numpy as np

_MASK = (1 << 64) - 1


def key_of(master_seed: int, *labels) -> int:
    """64-bit key for a labelled substream (labels may be ints or strings)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(master_seed & _MASK).to_bytes(8, "little"))
    for lab in labels:
        h.update(b"\x00" + str(lab).encode())
    return int.from_bytes(h.digest(), "little")


def generator(master_seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(key_of(master_seed, *labels)))


@nb.njit(cache=True)
def splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return x, z


@nb.njit(cache=True)
def mix64(x):
    """Stateless 64-bit finaliser (splitmix64 output function)."""
    _, z = splitmix64(x)
    return z


@nb.njit(cache=True)
def seed_state(key, index):
    st = np.empty(4, dtype=np.uint64)
    x = mix64(np.uint64(key) ^ mix64(np.uint64(index)))
    for i in range(4):
        x, z = splitmix64(x)
        st[i] = z
    if st[0] == 0 and st[1] == 0 and st[2] == 0 and st[3] == 0:
        st[0] = np.uint64(1)
    return st


@nb.njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(cache=True)
def next_u64(st):
    s0 = st[0]
    s1 = st[1]
    s2 = st[2]
    s3 = st[3]
    result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    st[0] = s0
    st[1] = s1
    st[2] = s2
    st[3] = s3
    return result


@nb.njit(cache=True)
def next_float(st):
    return (next_u64(st) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def next_below(st, n):
    # Lemire multiply-shift on the top 32 bits; n < 2**31
    x = next_u64(st) >> np.uint64(32)
    return np.int64((x * np.uint64(n)) >> np.uint64(32))


@nb.njit(cache=True)
def draw_index(st, cdf):
    u = next_float(st)
    lo = 0
    hi = cdf.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if u < cdf[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


class Stream:
    """A xoshiro256** stream usable from Python and from compiled kernels."""

    def __init__(self, key: int, index: int = 0):
        self.state = seed_state(np.uint64(key & _MASK), np.uint64(index & _MASK))

    @classmethod
    def from_seed(cls, master_seed: int, *labels, index: int = 0) -> "Stream":
        return cls(key_of(master_seed, *labels), index)

    def random(self) -> float:
        return float(next_float(self.state))

    def below(self, n: int) -> int:
        return int(next_below(self.state, n))

    def u64(self) -> int:
        return int(next_u64(self.state))

    def spawn(self, label) -> "Stream":
        return Stream(key_of(self.u64(), label))
