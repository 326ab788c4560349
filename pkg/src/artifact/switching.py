"""F-switching sets, switching frequencies along the walk, coset decay and the
hash-thinned stopping time whose support is F-switching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .groups import IDENTITY, LL_IDENTITY, FreeWord, fg_inv, fg_mul, project
from .measures import StepMeasure, lazy_srw
from .rng import Stream, key_of
from .stopping import FG_TABLE, Fixed, Mixture, StoppedSample, SwitchHit, _table_for

_MASK = (1 << 64) - 1


def finite_set(words: Iterable, symmetric: bool = False) -> tuple:
    """Deduplicated tuple of FreeWords in shortlex order (closed under inverses if asked)."""
    out = {w if isinstance(w, FreeWord) else FreeWord.parse(str(w)) for w in words}
    if symmetric:
        out |= {fg_inv(w) for w in out}
    return tuple(sorted(out, key=lambda w: (len(w), w.letters)))


def product_set(A: Sequence[FreeWord], B: Sequence[FreeWord]) -> tuple:
    return finite_set(fg_mul(a, b) for a in A for b in B)


def power_set(A: Sequence[FreeWord], k: int) -> tuple:
    out = (IDENTITY,)
    for _ in range(k):
        out = product_set(out, A)
    return out


# ---------------------------------------------------------------------------
# exact switching certificates


def is_switching(A: Sequence[FreeWord], F: Sequence[FreeWord]):
    """(True, None) if f1 a1 f2 = f3 a2 f4 forces equal triples, otherwise
    (False, (t1, t2)) with two distinct triples giving the same product."""
    A = finite_set(A)
    F = finite_set(F)
    seen: dict[str, tuple] = {}
    for a in A:
        for f1 in F:
            left = fg_mul(f1, a)
            for f2 in F:
                key = fg_mul(left, f2).letters
                trip = (f1, a, f2)
                other = seen.get(key)
                if other is not None and other != trip:
                    return False, (other, trip)
                seen[key] = trip
    return True, None


def is_superswitching(g: FreeWord, F: Sequence[FreeWord]):
    return is_switching((g, fg_inv(g)), F)


# ---------------------------------------------------------------------------
# hashing of group elements (must agree with the compiled kernels)


def word_hash(w: FreeWord) -> tuple[int, int]:
    h1 = h2 = 0
    for c in w.codes():
        h1 = (h1 * K.HB + c + 1) % K.P1
        h2 = (h2 * K.HB + c + 1) % K.P2
    return h1, h2


def word_key(w: FreeWord) -> int:
    h1, h2 = word_hash(w)
    return ((h1 << 30) ^ h2 ^ ((len(w) << 60) & _MASK)) & _MASK


def _mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def uniform_of(seed: int, w: FreeWord) -> int:
    """The 64-bit uniform U_w attached to w (compare as integers, divide by
    2^64 for a float)."""
    return _mix64(_mix64(seed & _MASK) ^ word_key(w))


def _flatten(words: Sequence[FreeWord]):
    codes = np.array([c for w in words for c in w.codes()], dtype=np.int8)
    lens = np.array([len(w) for w in words], dtype=np.int64)
    offs = np.concatenate([[0], np.cumsum(lens)[:-1]]).astype(np.int64)
    return codes, offs, lens


@dataclass
class SwitchHitSampler:
    """Thinned target T = {a : a F-switching and U_a >= U_b for b in F^2 a F^2}.

    With ``exclude_F`` elements of F are never targets.  With ``symmetric``
    the walk stops on T or T^{-1} (pure Python stepping).
    """

    F: tuple
    seed: int
    horizon_cap: int
    exclude_F: bool = False
    symmetric: bool = False

    def __post_init__(self):
        self.F = finite_set(self.F)
        self.F2 = product_set(self.F, self.F)
        self._F_set = set(self.F)
        self._fk = _flatten(self.F)
        self._gk = _flatten(self.F2)
        self._fkeys = np.array([word_key(f) for f in self.F], dtype=np.uint64)
        self._pw = K.powers(self.horizon_cap + 8 * max((len(w) for w in self.F2), default=0) + 16)

    @property
    def spec(self) -> SwitchHit:
        return SwitchHit(self.F, self.seed, self.horizon_cap, self.exclude_F, self.symmetric)

    def in_target(self, a: FreeWord) -> bool:
        """Reference implementation with exact reduced products."""
        if self.exclude_F and a in self._F_set:
            return False
        ka = word_key(a)
        ua = uniform_of(self.seed, a)
        for x in self.F2:
            xa = fg_mul(x, a)
            for y in self.F2:
                b = fg_mul(xa, y)
                kb = word_key(b)
                if kb == ka:
                    continue
                ub = uniform_of(self.seed, b)
                if ub > ua or (ub == ua and kb > ka):
                    return False
        return is_switching((a,), self.F)[0]

    def in_target_kernel(self, a: FreeWord) -> bool:
        codes = np.array(a.codes(), dtype=np.int8)
        la = codes.size
        H1 = np.zeros(la + 1, dtype=np.int64)
        H2 = np.zeros(la + 1, dtype=np.int64)
        for i, c in enumerate(codes):
            H1[i + 1] = (H1[i] * K.HB + c + 1) % K.P1
            H2[i + 1] = (H2[i] * K.HB + c + 1) % K.P2
        pw1, pw2 = K.powers(la + 64)
        maxf = int(self._gk[2].max()) if self._gk[2].size else 0
        tmp = np.empty(la + 4 * maxf + 4, dtype=np.int8)
        return bool(K.in_target(codes if la else np.zeros(1, np.int8), la, H1, H2, pw1, pw2,
                                np.uint64(self.seed & _MASK), *self._fk, *self._gk,
                                self._fkeys, self.exclude_F, tmp))

    def sample(self, rng: Stream) -> StoppedSample:
        if self.symmetric:
            return self._sample_python(rng)
        codes, steps, trunc = K.switch_hit_run(
            rng.state, self.horizon_cap, np.uint64(self.seed & _MASK), *self._fk, *self._gk,
            self._fkeys, self.exclude_F, *self._pw,
        )
        w = FreeWord.from_codes(codes)
        return StoppedSample(w, int(steps), 0, bool(trunc), project(w))

    def _sample_python(self, rng: Stream) -> StoppedSample:
        g = IDENTITY
        for t in range(1, self.horizon_cap + 1):
            u = rng.u64() >> 61
            c = int(FG_TABLE[u])
            if c < 0:
                continue
            g = fg_mul(g, FreeWord("aAbB"[c]))
            if self.in_target(g) or (self.symmetric and self.in_target(fg_inv(g))):
                return StoppedSample(g, t, 0, False, project(g))
        return StoppedSample(g, self.horizon_cap, 0, True, project(g))


def switch_hit_stopping(m: StepMeasure, F: Sequence[FreeWord], seed: int, horizon_cap: int = 10**6,
                        *, exclude_F: bool = False, symmetric: bool = False) -> SwitchHitSampler:
    """Sampler for the stopping time 'first hit of the thinned switching set'.

    F is symmetrised internally.
    """
    _table_for(m)
    return SwitchHitSampler(finite_set(F, symmetric=True), seed, horizon_cap, exclude_F, symmetric)


# ---------------------------------------------------------------------------
# walk statistics


def walk_words(n: int, paths: int, seed: int, label: str = "words") -> list[FreeWord]:
    """Endpoints w_n of independent lazy walks on F2."""
    if n == 0:
        return [IDENTITY] * paths
    mix = Mixture.plain()
    cdf, kinds, s, r, cap = mix.arrays()
    codes, offs, _, _ = K.word_ensemble(np.uint64(key_of(seed, label, n)), 0, paths, FG_TABLE,
                                        cdf, kinds, s, r, cap, True, n)
    letters = "aAbB"
    return [FreeWord("".join(letters[c] for c in codes[offs[i]: offs[i + 1]])) for i in range(paths)]


@dataclass
class FrequencyEstimate:
    n: int
    estimate: float
    stderr: float
    paths: int


def _freq(n, hits, paths):
    est = hits / paths
    return FrequencyEstimate(n, est, math.sqrt(max(est * (1 - est), 0.0) / paths), paths)


def switching_frequency(m: StepMeasure, F: Sequence[FreeWord], n_list: Sequence[int], paths: int,
                        seed: int) -> list[FrequencyEstimate]:
    """P(w_n is F-switching), each sample certified exactly."""
    _table_for(m)
    F = finite_set(F)
    out = []
    for n in n_list:
        words = walk_words(n, paths, seed, "switching")
        cache: dict[FreeWord, bool] = {}
        hits = 0
        for w in words:
            if w not in cache:
                cache[w] = is_switching((w,), F)[0]
            hits += cache[w]
        out.append(_freq(n, hits, paths))
    return out


def cyclic_membership(g: FreeWord) -> Callable[[FreeWord], bool]:
    """Membership test for the cyclic subgroup generated by g."""
    if len(g) == 0:
        return lambda w: len(w) == 0
    # g = u c u^-1 with c cyclically reduced
    letters = g.letters
    k = 0
    while k < len(letters) // 2 and letters[k] == {"a": "A", "A": "a", "b": "B", "B": "b"}[letters[-1 - k]]:
        k += 1
    u = FreeWord(letters[:k])
    c = FreeWord(letters[k: len(letters) - k])
    ci = fg_inv(c)

    def member(w: FreeWord) -> bool:
        x = fg_mul(fg_mul(fg_inv(u), w), u)
        if len(x) % len(c):
            return False
        n = len(x) // len(c)
        return x.letters in (c.letters * n, ci.letters * n)

    return member


def kernel_membership(w: FreeWord) -> bool:
    return project(w) == LL_IDENTITY


def coset_decay(m: StepMeasure, H_membership: Callable[[FreeWord], bool], F: Sequence[FreeWord],
                n_list: Sequence[int], paths: int, seed: int) -> list[FrequencyEstimate]:
    """P(w_n in H F) = P(w_n f^-1 in H for some f in F)."""
    _table_for(m)
    Finv = [fg_inv(f) for f in finite_set(F)]
    out = []
    for n in n_list:
        hits = 0
        for w in walk_words(n, paths, seed, "coset"):
            hits += any(H_membership(fg_mul(w, fi)) for fi in Finv)
        out.append(_freq(n, hits, paths))
    return out
