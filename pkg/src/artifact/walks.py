"""Trajectories and the estimators built on them: boundary cylinders, lamp
stabilisation, limit-lamp functionals, mean-value tests and entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import _kernels as K
from .groups import IDENTITY, LL_IDENTITY, FreeWord, LampElem, LETTERS
from .measures import StepMeasure, sample_step
from .rng import Stream, key_of
from .stopping import FG_TABLE, Mixture, sample_mu_tau
from .measures import lazy_srw


class DepthMismatch(ValueError):
    pass


class _Unresolved:
    def __repr__(self):
        return "Unresolved"

    def __bool__(self):
        return False


UNRESOLVED = _Unresolved()


@dataclass
class Trajectory:
    increments: list
    partial_products: list
    projected: list | None = None

    @property
    def endpoint(self):
        return self.partial_products[-1]


def run_walk(step_source, n_steps: int, start, rng: Stream, base: StepMeasure | None = None) -> Trajectory:
    """Right-multiply ``n_steps`` increments onto ``start``.

    ``step_source`` is a StepMeasure, a Mixture (one mu_tau increment per step,
    on top of ``base``, default the lazy walk on F2) or a callable rng -> element.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if isinstance(step_source, StepMeasure):
        draw = lambda: sample_step(step_source, rng)  # noqa: E731
    elif isinstance(step_source, Mixture):
        b = base or lazy_srw()
        draw = lambda: sample_mu_tau(b, step_source, rng).endpoint  # noqa: E731
    else:
        draw = lambda: step_source(rng)  # noqa: E731
    incs, prods = [], []
    g = start
    for _ in range(n_steps):
        h = draw()
        g = g * h
        incs.append(h)
        prods.append(g)
    return Trajectory(incs, prods)


def boundary_cylinder(traj: Trajectory | Sequence[FreeWord], depth: int, margin: int = 0):
    """Length-``depth`` prefix of the last word, if it has not changed over the
    final ``margin`` steps; otherwise UNRESOLVED."""
    words = traj.partial_products if isinstance(traj, Trajectory) else list(traj)
    if not words:
        return UNRESOLVED
    last = words[-1]
    if len(last) < depth:
        return UNRESOLVED
    target = last.prefix(depth)
    n = len(words)
    if margin >= n:
        return UNRESOLVED
    for w in words[n - 1 - margin:]:
        if len(w) < depth or w.prefix(depth) != target:
            return UNRESOLVED
    return target


# ---------------------------------------------------------------------------
# cylinder histograms


@dataclass
class CylinderHistogram:
    depth: int
    counts: dict
    total: int
    unresolved: int = 0
    base_steps: int = 0
    truncations: int = 0

    def __post_init__(self):
        if sum(self.counts.values()) != self.total:
            raise ValueError("counts do not add up to total")
        for k in self.counts:
            if len(k) != self.depth:
                raise ValueError(f"cylinder key {k!r} has the wrong length")

    @classmethod
    def from_prefixes(cls, prefixes, depth: int, **extra) -> "CylinderHistogram":
        counts: dict[str, int] = {}
        for p in prefixes:
            counts[p] = counts.get(p, 0) + 1
        return cls(depth, dict(sorted(counts.items())), sum(counts.values()), **extra)

    def frequencies(self) -> dict:
        return {k: v / self.total for k, v in self.counts.items()}


def _mix_arrays(mix: Mixture):
    cdf, kinds, s, r, cap = mix.arrays()
    return cdf, kinds, s, r, cap


def hitting_samples(mix: Mixture, depth: int, n_steps: int, margin: int, paths: int, seed: int,
                    *, force_first: int = -1, table=FG_TABLE, label: str = "hitting", first: int = 0):
    """Per-path depth-``depth`` prefixes of the mixture walk (None if unresolved)."""
    cdf, kinds, s, r, cap = _mix_arrays(mix)
    pref, last_p, steps, trunc = K.prefix_ensemble(
        np.uint64(key_of(seed, label)), first, paths, table, cdf, kinds, s, r, cap,
        mix.reject_truncated, n_steps, force_first, depth,
    )
    resolved = (last_p <= n_steps - margin) & (pref[:, depth - 1] >= 0) if depth else np.ones(paths, bool)
    keys = ["".join(LETTERS[c] for c in row) for row in pref]
    return keys, resolved, int(steps.sum()), int(trunc.sum())


def hitting_histogram(mix: Mixture, depth: int, n_steps: int, margin: int, paths: int, seed: int,
                      *, table=FG_TABLE, label: str = "hitting") -> CylinderHistogram:
    keys, resolved, steps, trunc = hitting_samples(mix, depth, n_steps, margin, paths, seed,
                                                   table=table, label=label)
    good = [k for k, ok in zip(keys, resolved) if ok]
    return CylinderHistogram.from_prefixes(good, depth, unresolved=int((~resolved).sum()),
                                           base_steps=steps, truncations=trunc)


@dataclass
class HittingComparison:
    tv: float
    chi2: float
    dof: int
    pvalue: float
    alpha: float

    @property
    def passed(self) -> bool:
        return self.pvalue >= self.alpha


def compare_hitting(h1: CylinderHistogram, h2: CylinderHistogram, alpha: float = 0.01,
                    min_expected: float = 5.0) -> HittingComparison:
    """Total variation between the empirical cylinder laws and a two-sample
    chi-square test; cells with small expected counts are pooled."""
    if h1.depth != h2.depth:
        raise DepthMismatch(f"depths {h1.depth} and {h2.depth} differ")
    keys = sorted(set(h1.counts) | set(h2.counts))
    a = np.array([h1.counts.get(k, 0) for k in keys], dtype=float)
    b = np.array([h2.counts.get(k, 0) for k in keys], dtype=float)
    tv = 0.5 * float(np.abs(a / max(h1.total, 1) - b / max(h2.total, 1)).sum())
    if h1.total == 0 or h2.total == 0:
        return HittingComparison(tv, math.nan, 0, 0.0, alpha)
    n = a + b
    n_tot = n.sum()
    small = np.minimum(n * h1.total / n_tot, n * h2.total / n_tot) < min_expected
    if small.any():
        a = np.append(a[~small], a[small].sum())
        b = np.append(b[~small], b[small].sum())
        keep = (a + b) > 0
        a, b = a[keep], b[keep]
    if a.size < 2:
        return HittingComparison(tv, 0.0, 0, 1.0, alpha)
    if np.array_equal(a * h2.total, b * h1.total):
        return HittingComparison(tv, 0.0, a.size - 1, 1.0, alpha)
    chi2, pval, dof, _ = stats.chi2_contingency(np.vstack([a, b]), correction=False)
    return HittingComparison(tv, float(chi2), int(dof), float(pval), alpha)


# ---------------------------------------------------------------------------
# lamps


@dataclass
class LampStabilityReport:
    window: int
    n_steps: int
    checkpoints: list
    frequencies: list
    paths: int
    base_steps: int
    truncations: int

    def rows(self):
        return list(zip(self.checkpoints, self.frequencies))


def _lamp_run(mix: Mixture, n_steps: int, start: LampElem, site: int, window: int, paths: int,
              key: int, table=FG_TABLE):
    cdf, kinds, s, r, cap = _mix_arrays(mix)
    lamps = np.array(sorted(start.lamps), dtype=np.int64)
    return K.lamp_ensemble(np.uint64(key), 0, paths, table, cdf, kinds, s, r, cap,
                           mix.reject_truncated, n_steps, lamps, start.pos, site, window)


def lamp_stability(mix: Mixture, n_mu_tau_steps: int, window: int, paths: int, seed: int,
                   checkpoints: Sequence[int] | None = None, label: str = "lamp-stability") -> LampStabilityReport:
    """Fraction of paths whose lamps on [-window, window] do not change
    between step j and step ``n_mu_tau_steps``, for each checkpoint j.

    The default checkpoints n/8, n/4, n/2 leave at least n/2 steps of
    look-ahead; a checkpoint at n itself would be stable by definition.
    """
    n = n_mu_tau_steps
    if checkpoints is None:
        checkpoints = sorted({max(1, n // 8), max(1, n // 4), max(1, n // 2)})
    _, last_w, steps, trunc = _lamp_run(mix, n, LL_IDENTITY, 0, window, paths, key_of(seed, label))
    freqs = [float(np.mean(last_w <= j)) for j in checkpoints]
    return LampStabilityReport(window, n, list(checkpoints), freqs, paths, int(steps.sum()), int(trunc.sum()))


@dataclass
class LimitLampFunctional:
    """f(x) = P_x(lamp at ``site`` is on after ``n_steps`` mixture steps).

    The lamp is called resolved on a path when it has not changed during the
    last ``margin`` steps; the unresolved fraction is reported with every
    estimate.
    """

    mix: Mixture
    site: int = 0
    n_steps: int = 32
    margin: int = 8
    paths: int = 10_000
    seed: int = 0
    unresolved: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def _run(self, x: LampElem, n: int, label):
        if (x, n, label) in self._cache:
            return self._cache[(x, n, label)]
        lamp, last_w, _, _ = _lamp_run(self.mix, n, x, self.site, 0, self.paths,
                                       key_of(self.seed, "limit-lamp", x.canonical(), n, label))
        est = float(lamp.mean())
        se = math.sqrt(max(est * (1 - est), 1e-300) / self.paths)
        self.unresolved[(x.canonical(), n, label)] = float(np.mean(last_w > n - self.margin))
        self._cache[(x, n, label)] = (est, se)
        return est, se

    def estimate(self, x: LampElem, label="") -> tuple[float, float]:
        return self._run(x, self.n_steps, label)

    def estimate_after_step(self, x: LampElem, label="") -> tuple[float, float]:
        """Estimate of E f(x Y) with Y one projected mixture increment."""
        return self._run(x, self.n_steps + 1, label)


@dataclass
class ConstantFunctional:
    value: float

    def estimate(self, x, label="") -> tuple[float, float]:
        return self.value, 0.0


def estimate_limit_functional(mix: Mixture, start: LampElem, site: int, paths: int, seed: int,
                              n_steps: int = 32, margin: int = 8):
    """(estimate, stderr, unresolved fraction) for the limit-lamp functional."""
    f = LimitLampFunctional(mix, site, n_steps, margin, paths, seed)
    est, se = f.estimate(start)
    return est, se, next(iter(f.unresolved.values()))


@dataclass
class HarmonicityReport:
    measure: str
    points: list
    delta: list
    stderr: list

    def z(self) -> np.ndarray:
        d = np.asarray(self.delta)
        s = np.asarray(self.stderr)
        with np.errstate(divide="ignore", invalid="ignore"):
            # exact estimators (stderr 0) leave only rounding error in delta
            return np.where(s > 0, np.abs(d) / s, np.where(np.abs(d) < 1e-12, 0.0, np.inf))

    def all_within(self, k: float = 3.0) -> bool:
        return bool((self.z() < k).all())

    def any_outside(self, k: float = 3.0) -> bool:
        return bool((self.z() > k).any())


def default_test_points() -> list[LampElem]:
    pts = []
    for pos in range(-2, 3):
        for lamps in ((), (-1,), (0,), (1,)):
            pts.append(LampElem(frozenset(lamps), pos))
    pts += [LampElem(frozenset({-1, 1}), 0), LampElem(frozenset({-1, 0}), 0),
            LampElem(frozenset({0, 1}), 0), LampElem(frozenset({-1, 0, 1}), 0),
            LampElem(frozenset({-1, 1}), 1)]
    return pts


def test_harmonicity(f, m, points: Sequence[LampElem]) -> HarmonicityReport:
    """Delta(x) = sum_y m(y) f(x y) - f(x) with independent estimator runs.

    ``m`` is a finitely supported StepMeasure on the lamplighter, or a Mixture
    (the projected mu_tau law, evaluated by sampling one increment), in which
    case ``f`` must be a LimitLampFunctional.  For a finite ``m`` each distinct
    point is estimated once; coefficients of equal points are merged before
    the variance is formed, so an atom at the identity cancels exactly.
    """
    deltas, ses = [], []
    for x in points:
        if isinstance(m, StepMeasure):
            coef: dict = {x: -1.0}
            for y, q in m.items():
                z = x * y
                coef[z] = coef.get(z, 0.0) + q
            acc, var = 0.0, 0.0
            for z, c in coef.items():
                if c == 0.0:
                    continue
                v, sz = f.estimate(z)
                acc += c * v
                var += (c * sz) ** 2
        elif isinstance(m, Mixture):
            if not isinstance(f, LimitLampFunctional):
                raise TypeError("mixture mean-value tests need a LimitLampFunctional")
            fx, sx = f.estimate(x)
            v, s = f.estimate_after_step(x)
            acc, var = v - fx, s * s + sx * sx
        else:
            raise TypeError(f"unsupported measure {type(m).__name__}")
        deltas.append(acc)
        ses.append(math.sqrt(var))
    tag = "mixture" if isinstance(m, Mixture) else "finite"
    return HarmonicityReport(tag, list(points), deltas, ses)


test_harmonicity.__test__ = False


# ---------------------------------------------------------------------------
# entropy


@dataclass
class EntropyProfile:
    n_list: list
    per_step: list
    miller_madow: list
    support: list
    note: str = "plug-in estimates are biased low; Miller-Madow adds (K-1)/(2N)"


def _lamplighter_endpoints(m: StepMeasure, n: int, paths: int, gen: np.random.Generator):
    width = 2 * n + 2 + 2 * max(max((abs(i) for i in x.lamps), default=0) + abs(x.pos) for x in m.support)
    off = width // 2
    lamps = np.zeros((paths, width + 1), dtype=np.uint8)
    pos = np.zeros(paths, dtype=np.int64)
    rows = np.arange(paths)
    cdf = m.cdf
    for _ in range(n):
        idx = np.minimum(np.searchsorted(cdf, gen.random(paths), side="right"), len(m.support) - 1)
        for j, x in enumerate(m.support):
            sel = idx == j
            if not sel.any():
                continue
            for i in x.lamps:
                lamps[rows[sel], off + pos[sel] + i] ^= 1
            pos[sel] += x.pos
    keys = np.concatenate([lamps, (pos + off).astype(np.uint16).view(np.uint8).reshape(paths, 2)], axis=1)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    return counts


def avez_entropy_profile(m: StepMeasure, n_list: Sequence[int], paths: int, seed: int) -> EntropyProfile:
    """H(m^{*n}) / n from the empirical endpoint histogram (exact for n = 1)."""
    per, mm, sup = [], [], []
    for n in n_list:
        if n == 1:
            h = m.entropy()
            per.append(h)
            mm.append(h)
            sup.append(len(m.support))
            continue
        counts = _lamplighter_endpoints(m, n, paths, np.random.Generator(np.random.PCG64(key_of(seed, "entropy", n))))
        q = counts / counts.sum()
        h = float(-(q * np.log(q)).sum())
        per.append(h / n)
        mm.append((h + (counts.size - 1) / (2 * paths)) / n)
        sup.append(int(counts.size))
    return EntropyProfile(list(n_list), per, mm, sup)
