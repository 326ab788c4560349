"""Step measures, the heavy-tailed record measure on N and record statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special

from .groups import (
    IDENTITY,
    LL_IDENTITY,
    FreeWord,
    LampElem,
    Projection,
    SemigroupWord,
    ll_mul,
    project,
)
from .rng import Stream

ZETA2_C = 6.0 / math.pi**2


class EmptyTail(ValueError):
    pass


class InsufficientData(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# step measures on groups


@dataclass(frozen=True)
class StepMeasure:
    """A finitely supported probability measure on one of the groups."""

    support: tuple
    probs: tuple
    group: str = "free_group"  # free_group | free_semigroup | lamplighter

    def __post_init__(self):
        if len(self.support) != len(self.probs) or not self.support:
            raise ValueError("support and probs must be non-empty and aligned")
        if any(q <= 0 for q in self.probs):
            raise ValueError("probabilities must be positive")
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {sum(self.probs)!r}, not 1")

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def items(self):
        return zip(self.support, self.probs)

    def entropy(self) -> float:
        """Shannon entropy in nats."""
        return float(-sum(q * math.log(q) for q in self.probs))

    def pushforward(self, proj: Projection | None = None) -> "StepMeasure":
        """Image measure on the lamplighter; atoms with equal image merge."""
        acc: dict[LampElem, float] = {}
        for g, q in self.items():
            x = g if isinstance(g, LampElem) else project(g, proj)
            acc[x] = acc.get(x, 0.0) + q
        keys = sorted(acc, key=lambda x: (x.pos, sorted(x.lamps)))
        return StepMeasure(tuple(keys), tuple(acc[k] for k in keys), "lamplighter")


def lazy_srw() -> StepMeasure:
    """mu = 1/2 delta_e + 1/8 (delta_a + delta_A + delta_b + delta_B)."""
    sup = (IDENTITY, FreeWord("a"), FreeWord("A"), FreeWord("b"), FreeWord("B"))
    return StepMeasure(sup, (0.5, 0.125, 0.125, 0.125, 0.125), "free_group")


def lazy_semigroup_walk() -> StepMeasure:
    sup = (SemigroupWord(""), SemigroupWord("a"), SemigroupWord("b"))
    return StepMeasure(sup, (0.5, 0.25, 0.25), "free_semigroup")


def point_mass(g, group: str = "free_group") -> StepMeasure:
    return StepMeasure((g,), (1.0,), group)


def sample_step(m: StepMeasure, rng: Stream):
    u = rng.random()
    i = int(np.searchsorted(m.cdf, u, side="right"))
    return m.support[min(i, len(m.support) - 1)]


def identity_of(group: str):
    if group == "lamplighter":
        return LL_IDENTITY
    if group == "free_semigroup":
        return SemigroupWord("")
    return IDENTITY


def convolve(m: StepMeasure, other: StepMeasure) -> StepMeasure:
    """Exact convolution of two lamplighter measures (used for small n)."""
    acc: dict[LampElem, float] = {}
    for x, q in m.items():
        for y, r in other.items():
            z = ll_mul(x, y)
            acc[z] = acc.get(z, 0.0) + q * r
    keys = sorted(acc, key=lambda x: (x.pos, sorted(x.lamps)))
    total = sum(acc.values())
    return StepMeasure(tuple(keys), tuple(acc[k] / total for k in keys), "lamplighter")


# ---------------------------------------------------------------------------
# the record measure p on N


@lru_cache(maxsize=4)
def _zeta2_cdf(n_max: int) -> np.ndarray:
    i = np.arange(n_max + 1, dtype=float)
    # P(X <= i) = 1 - c * trigamma(i + 2)
    return 1.0 - ZETA2_C * special.polygamma(1, i + 2.0)


@dataclass(frozen=True)
class RecordMeasure:
    """Probability measure on N = {0, 1, 2, ...}.

    The default is ``p(n) = (6/pi^2) (n+1)^-2``.  Passing ``weights`` gives a
    finitely supported measure (normalised on construction).
    """

    weights: tuple | None = None
    n_max: int = 10**6

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or w.size == 0 or (w < 0).any() or w.sum() <= 0:
                raise ValueError("weights must be a non-empty non-negative vector")
            object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))

    @classmethod
    def delta(cls, n: int) -> "RecordMeasure":
        w = [0.0] * (n + 1)
        w[n] = 1.0
        return cls(tuple(w))

    @property
    def is_default(self) -> bool:
        return self.weights is None

    def pmf(self, i) -> np.ndarray | float:
        i_arr = np.asarray(i)
        if self.is_default:
            out = ZETA2_C / (i_arr + 1.0) ** 2
        else:
            w = np.asarray(self.weights)
            safe = np.clip(i_arr, 0, w.size - 1)
            out = np.where(i_arr < w.size, w[safe], 0.0)
        out = np.where(i_arr < 0, 0.0, out)
        return float(out) if np.ndim(out) == 0 else out

    def tail(self, i) -> np.ndarray | float:
        """sum_{l >= i} p(l), closed form for the default family."""
        i_arr = np.maximum(np.asarray(i, dtype=float), 0.0)
        if self.is_default:
            out = ZETA2_C * special.polygamma(1, i_arr + 1.0)
        else:
            w = np.asarray(self.weights)
            suffix = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
            idx = np.minimum(i_arr.astype(int), w.size)
            out = suffix[idx]
        return float(out) if np.ndim(out) == 0 else out

    def truncated(self, k_max: int) -> np.ndarray:
        """p conditioned on {0, ..., k_max}, as a probability vector."""
        w = np.asarray(self.pmf(np.arange(k_max + 1)), dtype=float)
        if w.sum() <= 0:
            raise ValueError(f"p gives no mass to 0..{k_max}")
        return w / w.sum()

    def cdf_table(self) -> np.ndarray:
        if self.is_default:
            return _zeta2_cdf(self.n_max)
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c

    def _invert_tail(self, v: float) -> int:
        # smallest n with tail(n + 1) < v; tail(n) ~ c / (n + 1/2)
        lo = self.n_max
        hi = max(lo + 1, int(2 * ZETA2_C / v) + 2)
        while self.tail(hi + 1) >= v:
            hi *= 2
        while lo < hi:
            mid = (lo + hi) // 2
            if self.tail(mid + 1) < v:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def sample(self, gen: np.random.Generator, size=None):
        u = gen.random(size)
        cdf = self.cdf_table()
        idx = np.searchsorted(cdf, u, side="right")
        if self.is_default:
            over = np.flatnonzero(np.atleast_1d(idx) >= cdf.size)
            if over.size:
                flat = np.atleast_1d(idx).astype(np.int64)
                uu = np.atleast_1d(u)
                for j in over:
                    flat[j] = self._invert_tail(1.0 - uu[j])
                idx = flat.reshape(np.shape(idx)) if np.ndim(idx) else flat[0]
        else:
            idx = np.minimum(idx, cdf.size - 1)
        return idx


def record_transition_diag(p: RecordMeasure, i: int) -> float:
    """p(i, i) = p(i) / sum_{l >= i} p(l), the record chain's holding probability."""
    t = p.tail(i)
    if t <= 0:
        raise EmptyTail(f"p has no mass at or above {i}")
    return float(p.pmf(i) / t)


def sum_diag_squares(p: RecordMeasure, n: int) -> float:
    i = np.arange(n + 1)
    t = np.asarray(p.tail(i))
    ok = t > 0
    q = np.zeros_like(t)
    q[ok] = np.asarray(p.pmf(i))[ok] / t[ok]
    return float(np.sum(q**2))


# ---------------------------------------------------------------------------
# record traces


@dataclass
class RecordTrace:
    samples: np.ndarray
    record_times: np.ndarray  # 1-based, record_times[0] == 1
    record_values: np.ndarray
    simple: np.ndarray

    @property
    def interior(self) -> np.ndarray:
        """Records with both neighbours observed."""
        k = np.arange(self.record_times.size)
        return (k >= 1) & (k <= self.record_times.size - 2)

    def rows(self):
        for k, (t, r, s) in enumerate(zip(self.record_times, self.record_values, self.simple)):
            yield k, int(t), int(r), bool(s)


def trace_records(samples: Sequence[int]) -> RecordTrace:
    x = np.asarray(samples, dtype=np.int64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("need a non-empty 1-d sequence")
    prev_max = np.empty_like(x)
    prev_max[0] = np.iinfo(np.int64).min
    prev_max[1:] = np.maximum.accumulate(x)[:-1]
    idx = np.flatnonzero(x >= prev_max)
    vals = x[idx]
    return RecordTrace(x, idx + 1, vals, simple_flags(vals))


def simple_flags(vals: np.ndarray) -> np.ndarray:
    """R_k is simple when R_{k-1} < R_k < R_{k+1}; a missing neighbour counts
    as satisfied."""
    vals = np.asarray(vals)
    left = np.ones(vals.size, dtype=bool)
    right = np.ones(vals.size, dtype=bool)
    left[1:] = vals[:-1] < vals[1:]
    right[:-1] = vals[:-1] < vals[1:]
    return left & right


def write_records_csv(path, trace: RecordTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "T_k", "R_k", "simple"])
        for row in trace.rows():
            w.writerow([row[0], row[1], row[2], int(row[3])])


def simulate_record_chain(p: RecordMeasure, gen: np.random.Generator, horizon: int):
    """Record values and times generated directly from the record chain.

    R_0 ~ p at time 1; R_{k+1} ~ p( . | >= R_k) after a geometric wait with
    success probability tail(R_k).  Equal in law to ``trace_records`` of
    ``horizon`` i.i.d. samples.
    """
    times = [1]
    vals = [int(p.sample(gen))]
    while True:
        i = vals[-1]
        t = p.tail(i)
        wait = int(gen.geometric(t)) if t < 1.0 else 1
        if times[-1] + wait > horizon:
            break
        # conditional draw: invert the cdf restricted to [i, inf)
        base = 1.0 - t
        u = base + gen.random() * t
        if p.is_default:
            cdf = p.cdf_table()
            j = int(np.searchsorted(cdf, u, side="right"))
            if j >= cdf.size:
                j = p._invert_tail(max(1.0 - u, 1e-300))
            j = max(j, i)
        else:
            cdf = p.cdf_table()
            j = max(i, min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1))
        times.append(times[-1] + wait)
        vals.append(j)
    return np.asarray(times), np.asarray(vals)


@dataclass
class SimpleRecordDecay:
    k0: list
    non_simple: list
    stderr: list
    records: list


def non_simple_decay(p: RecordMeasure, trials: int, horizon: int, gen: np.random.Generator,
                     k0_list: Sequence[int] = (1, 5, 10)) -> SimpleRecordDecay:
    """Fraction of non-simple records among records with index >= k0.

    The last record of each trace has no observed successor and is skipped.
    """
    ks, flags = [], []
    for _ in range(trials):
        _, vals = simulate_record_chain(p, gen, horizon)
        f = simple_flags(vals)[:-1]
        ks.append(np.arange(f.size))
        flags.append(f)
    ks = np.concatenate(ks)
    flags = np.concatenate(flags)
    fr, se, n = [], [], []
    for k0 in k0_list:
        sel = ~flags[ks >= k0]
        m = sel.size
        q = float(sel.mean()) if m else math.nan
        fr.append(q)
        se.append(math.sqrt(q * (1 - q) / m) if m else math.nan)
        n.append(int(m))
    return SimpleRecordDecay(list(k0_list), fr, se, n)


# ---------------------------------------------------------------------------
# gauge


@dataclass
class Gauge:
    """Non-decreasing table m -> Phi(m) with an analytic fallback beyond it."""

    table: np.ndarray
    fallback_power: int = 3
    quantile: float = 0.999
    mode: str = "absolute"
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def fallback(self, m: int) -> int:
        return (int(m) + 1) ** self.fallback_power

    def __call__(self, m: int) -> int:
        m = int(m)
        if m < self.table.size:
            return int(self.table[m])
        last = int(self.table[-1]) if self.table.size else 0
        return max(last, self.fallback(m))

    def values(self, ms) -> np.ndarray:
        return np.array([self(m) for m in ms], dtype=np.int64)

    @classmethod
    def analytic(cls, upto: int = 64, power: int = 3) -> "Gauge":
        t = (np.arange(upto + 1) + 1) ** power
        return cls(t.astype(np.int64), power, 1.0, "absolute")

    @classmethod
    def constant(cls, values: Sequence[int]) -> "Gauge":
        t = np.maximum.accumulate(np.asarray(values, dtype=np.int64))
        return cls(t, 3, 1.0, "absolute")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "Phi_m"])
            for m, v in enumerate(self.table):
                w.writerow([m, int(v)])


def _record_pairs(p: RecordMeasure, gen, trials: int, horizon: int, mode: str):
    """(R_k, next-record statistic, censored) triples over Monte Carlo traces."""
    rs, ts, cens = [], [], []
    for _ in range(trials):
        times, vals = simulate_record_chain(p, gen, horizon)
        nxt = np.append(times[1:], horizon + 1)
        stat = nxt - times if mode == "gap" else nxt
        c = np.zeros(times.size, dtype=bool)
        c[-1] = True
        rs.append(vals)
        ts.append(stat)
        cens.append(c)
    return np.concatenate(rs), np.concatenate(ts), np.concatenate(cens)


def fit_gauge(
    p: RecordMeasure,
    trials: int,
    horizon: int,
    quantile: float,
    gen: np.random.Generator,
    *,
    mode: str = "absolute",
    min_count: int = 200,
    fallback: bool = True,
    fallback_power: int = 3,
) -> Gauge:
    """Empirical gauge: P(next-record time >= Phi(R_k)) <= 1 - quantile per value.

    ``mode="absolute"`` bounds T_{k+1}; ``mode="gap"`` bounds T_{k+1} - T_k.
    Values with fewer than ``min_count`` observations fall back to
    ``(m+1)**fallback_power`` (never below what the data already demand).
    """
    if trials < 1000:
        raise ValueError("fit_gauge needs at least 1000 trials")
    if mode not in ("absolute", "gap"):
        raise ValueError(f"unknown gauge mode {mode!r}")
    r, t, c = _record_pairs(p, gen, trials, horizon, mode)
    # record values are heavy tailed; tabulate only up to the last value seen
    # min_count times and leave the rest to the fallback
    counts = np.bincount(r[r <= 1 << 20])
    dense = np.flatnonzero(counts >= min_count)
    m_max = int(dense[-1]) if dense.size else 0
    counts = np.pad(counts, (0, max(0, m_max + 1 - counts.size)))[: m_max + 1]
    table = np.zeros(m_max + 1, dtype=np.int64)
    order = np.argsort(r, kind="stable")
    r, t, c = r[order], t[order], c[order]
    bounds = np.searchsorted(r, np.arange(m_max + 2))
    for m in range(m_max + 1):
        tm = t[bounds[m]: bounds[m + 1]]
        cm = c[bounds[m]: bounds[m + 1]]
        n = tm.size
        allowed = int(math.floor((1.0 - quantile) * n + 1e-9))
        finite = np.sort(tm[~cm])
        n_cens = int(cm.sum())
        need = None
        if n >= min_count and n_cens <= allowed:
            pos = n - allowed - 1  # index into the sorted full sample
            if pos < finite.size:
                need = int(finite[pos]) + 1
        if need is None:
            lower = int(finite[-1]) + 1 if finite.size else 1
            if not fallback:
                if n == 0:
                    continue
                raise InsufficientData(f"record value {m}: {n} observations, {n_cens} censored")
            need = max(lower, (m + 1) ** fallback_power)
        table[m] = need
    table = np.maximum.accumulate(np.maximum(table, 1))
    return Gauge(table, fallback_power, quantile, mode, counts)


def gauge_exceedance(p: RecordMeasure, gauge: Gauge, trials: int, horizon: int, gen, *, interior_only=True):
    """Fraction of records with next-record statistic >= Phi(R_k).

    Censored records count as exceedances when Phi(R_k) <= horizon and are
    dropped otherwise.  Returns (exceed, total).
    """
    exceed = 0
    total = 0
    for _ in range(trials):
        times, vals = simulate_record_chain(p, gen, horizon)
        k_hi = times.size - 1 if interior_only else times.size
        k_lo = 1 if interior_only else 0
        for k in range(k_lo, k_hi):
            phi = gauge(int(vals[k]))
            if k + 1 < times.size:
                nxt = times[k + 1]
                stat = nxt - times[k] if gauge.mode == "gap" else nxt
                total += 1
                exceed += int(stat >= phi)
            else:
                base = times[k] if gauge.mode == "gap" else 0
                if phi + base <= horizon:
                    total += 1
                    exceed += 1
    return exceed, total


def record_hit_probability(p: RecordMeasure, n: int, trials: int, horizon: int, gen) -> tuple[float, float]:
    """Monte Carlo P(n is a record value within ``horizon`` samples), with stderr."""
    if trials < 1000:
        raise ValueError("record_hit_probability needs at least 1000 trials")
    hits = 0
    for _ in range(trials):
        t = 1
        v = int(p.sample(gen))
        while v < n:
            tl = p.tail(v)
            wait = int(gen.geometric(tl)) if tl < 1.0 else 1
            t += wait
            if t > horizon:
                break
            base = 1.0 - tl
            u = base + gen.random() * tl
            cdf = p.cdf_table()
            j = int(np.searchsorted(cdf, u, side="right"))
            if j >= cdf.size:
                j = p._invert_tail(max(1.0 - u, 1e-300)) if p.is_default else cdf.size - 1
            v = max(v, j)
        hits += int(v == n and t <= horizon)
    est = hits / trials
    return est, math.sqrt(max(est * (1 - est), 0.0) / trials)
