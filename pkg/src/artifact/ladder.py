"""Scales, ladders, spike decompositions, the despiking forest and the
experiments built on them (subtree retention, the optional-stopping gap)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .groups import IDENTITY, FreeWord, fg_inv, fg_mul
from .measures import Gauge, RecordMeasure, StepMeasure, lazy_srw, trace_records
from .rng import Stream, key_of
from .stopping import FG_TABLE, Fixed, Mixture, SwitchHit
from .switching import finite_set, switch_hit_stopping
from .walks import hitting_samples


class BudgetExceeded(RuntimeError):
    pass


class CertificateViolation(AssertionError):
    pass


class EmptyCylinder(ValueError):
    pass


@dataclass(frozen=True)
class ProductSet:
    """gens^k, stored formally; ``expand`` materialises it under a budget."""

    gens: tuple
    exponent: int

    def expand(self, budget: int = 200_000) -> frozenset:
        return _power(self.gens, self.exponent, budget)


def _power(gens: Iterable[FreeWord], k: int, budget: int) -> frozenset:
    gens = tuple(set(gens))
    out = {IDENTITY} if k == 0 or IDENTITY in gens else {IDENTITY}
    layer = {IDENTITY}
    has_e = IDENTITY in gens
    for _ in range(k):
        nxt = {fg_mul(x, g) for x in layer for g in gens}
        if len(nxt) > budget:
            raise BudgetExceeded(f"product set exceeds {budget} elements")
        layer = nxt
        out |= nxt if has_e else set()
    if not has_e:
        out = layer
    if len(out) > budget:
        raise BudgetExceeded(f"product set exceeds {budget} elements")
    return frozenset(out)


def _power_upto(gens: Iterable[FreeWord], k: int, budget: int) -> frozenset:
    """Products of at most k elements of gens."""
    return _power(set(gens) | {IDENTITY}, k, budget)


@dataclass
class ScaleLadder:
    """(lambda, Sigma, A) on F2; ``sigma[n-1]`` is Sigma_n, ``A[n]`` is A_n."""

    lam: tuple
    sigma: tuple
    A: tuple
    budget: int = 200_000
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.sigma = tuple(frozenset(s) for s in self.sigma)
        for i, si in enumerate(self.sigma):
            for sj in self.sigma[i + 1:]:
                if si & sj:
                    raise ValueError("the Sigma sets must be pairwise disjoint")
        if IDENTITY not in self.A[0].expand(self.budget):
            raise ValueError("A_0 must contain the identity")

    @property
    def K(self) -> int:
        return len(self.sigma)

    def lam_of(self, n: int) -> int:
        return int(self.lam[min(n, len(self.lam) - 1)])

    def delta(self, n: int) -> frozenset:
        key = ("delta", n)
        if key not in self._memo:
            out = set(self.A[0].expand(self.budget))
            for i in range(1, n):
                for x in self.sigma[i - 1]:
                    out |= {x, fg_inv(x)}
                if i < len(self.A):
                    for x in self.A[i].expand(self.budget):
                        out |= {x, fg_inv(x)}
            self._memo[key] = frozenset(out)
        return self._memo[key]

    def delta_power(self, n: int, k: int) -> frozenset:
        """Products of at most k elements of Delta_n."""
        key = ("pow", n, k)
        if key not in self._memo:
            self._memo[key] = _power_upto(self.delta(n), k, self.budget)
        return self._memo[key]

    def certificate(self) -> list[tuple[int, bool, int]]:
        """(n, Sigma_n disjoint from Delta_n^{3 lambda(n)}, size of that set)."""
        out = []
        for n in range(1, self.K + 1):
            big = self.delta_power(n, 3 * self.lam_of(n))
            out.append((n, not (self.sigma[n - 1] & big), len(big)))
        return out

    def to_text(self) -> str:
        lines = [f"K {self.K}", "lambda " + " ".join(str(int(x)) for x in self.lam)]
        for n, s in enumerate(self.sigma, start=1):
            lines.append(f"Sigma {n} " + " ".join(str(w) for w in sorted(s, key=lambda w: (len(w), w.letters))))
        for n, a in enumerate(self.A):
            lines.append(f"A {n} exponent {a.exponent} gens " + " ".join(str(w) for w in a.gens))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SpikeDecomposition:
    prefix: FreeWord
    spike: FreeWord
    postfix: FreeWord
    level: int

    def product(self) -> FreeWord:
        return fg_mul(fg_mul(self.prefix, self.spike), self.postfix)


def _decompositions(g: FreeWord, L: ScaleLadder, budget: int, first_only: bool):
    found = []
    work = 0
    for n in range(1, L.K + 1):
        P = L.delta_power(n, L.lam_of(n))
        sigma = L.sigma[n - 1]
        Ps = sorted(P, key=lambda w: (len(w), w.letters))
        if len(P) <= len(sigma):
            # solve for the spike: s = x^-1 g y^-1 must lie in Sigma_n
            work += len(P) ** 2
            if work > budget:
                raise BudgetExceeded(f"spike search exceeded {budget} membership queries")
            for x in Ps:
                xg = fg_mul(fg_inv(x), g)
                for y in Ps:
                    s = fg_mul(xg, fg_inv(y))
                    if s in sigma:
                        found.append(SpikeDecomposition(x, s, y, n))
                        if first_only:
                            return found
            continue
        reach = 2 * max((len(w) for w in P), default=0)
        for s in sorted(sigma, key=lambda w: (len(w), w.letters)):
            if abs(len(s) - len(g)) > reach:
                continue
            s_inv = fg_inv(s)
            work += len(P)
            if work > budget:
                raise BudgetExceeded(f"spike search exceeded {budget} membership queries")
            for x in Ps:
                y = fg_mul(fg_mul(s_inv, fg_inv(x)), g)
                if y in P:
                    found.append(SpikeDecomposition(x, s, y, n))
                    if first_only:
                        return found
    found.sort(key=lambda d: (d.level, len(d.spike), d.spike.letters, len(d.prefix), d.prefix.letters))
    return found


def spike_decompose(g: FreeWord, L: ScaleLadder, budget: int = 10**7) -> SpikeDecomposition | None:
    out = _decompositions(g, L, budget, True)
    return out[0] if out else None


def all_spike_decompositions(g: FreeWord, L: ScaleLadder, budget: int = 10**7) -> list[SpikeDecomposition]:
    return _decompositions(g, L, budget, False)


@dataclass
class DespikingForest:
    vertices: frozenset
    parent: dict
    roots: frozenset

    @property
    def edges(self) -> list[tuple[FreeWord, FreeWord]]:
        return sorted(((p, g) for g, p in self.parent.items()), key=lambda e: (len(e[1]), e[1].letters))

    def ancestors(self, g: FreeWord) -> list[FreeWord]:
        out = []
        while g in self.parent:
            g = self.parent[g]
            out.append(g)
        return out

    def edge_list_text(self) -> str:
        return "".join(f"{p} {g}\n" for p, g in self.edges)


def build_forest(vertices: Iterable[FreeWord], L: ScaleLadder, budget: int = 10**7,
                 close: bool = True) -> DespikingForest:
    """Despiking forest on ``vertices`` (closed under taking prefixes when
    ``close``).  Raises CertificateViolation on a double decomposition, a cycle
    or a component with more than one unspiked vertex."""
    todo = list(vertices)
    verts: set[FreeWord] = set()
    parent: dict[FreeWord, FreeWord] = {}
    while todo:
        g = todo.pop()
        if g in verts:
            continue
        verts.add(g)
        ds = all_spike_decompositions(g, L, budget)
        if len(ds) > 1:
            raise CertificateViolation(f"{g} has {len(ds)} spike decompositions")
        if ds:
            parent[g] = ds[0].prefix
            if close and ds[0].prefix not in verts:
                todo.append(ds[0].prefix)
    # acyclicity
    state: dict[FreeWord, int] = {}
    for g in verts:
        path = []
        x = g
        while x in parent and state.get(x, 0) == 0:
            state[x] = 1
            path.append(x)
            x = parent[x]
        if state.get(x, 0) == 1:
            raise CertificateViolation(f"cycle through {x}")
        for y in path:
            state[y] = 2
    # one unspiked vertex per component (union-find over edges inside the set)
    uf = {v: v for v in verts}

    def find(v):
        while uf[v] != v:
            uf[v] = uf[uf[v]]
            v = uf[v]
        return v

    for g, p in parent.items():
        if p in verts:
            uf[find(g)] = find(p)
    roots_per: dict[FreeWord, int] = {}
    for v in verts:
        if v not in parent or parent[v] not in verts:
            r = find(v)
            roots_per[r] = roots_per.get(r, 0) + 1
    bad = [r for r, c in roots_per.items() if c != 1]
    if bad:
        raise CertificateViolation(f"{len(bad)} components without a unique root")
    roots = frozenset(v for v in verts if v not in parent)
    return DespikingForest(frozenset(verts), parent, roots)


# ---------------------------------------------------------------------------
# construction of the mixture on F2


@dataclass
class SSets:
    table: dict
    mass: dict
    required: dict
    missing_mass: dict

    def get(self, i: int, j: int) -> frozenset:
        return self.table[(i, j)]


def _smallest_support(pool: Sequence[FreeWord], required: float) -> tuple[frozenset, float]:
    counts: dict[FreeWord, int] = {}
    for w in pool:
        counts[w] = counts.get(w, 0) + 1
    n = len(pool)
    target = min(1.0, required + 3 * math.sqrt(required * (1 - required) / n))
    order = sorted(counts.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0].letters))
    out, acc = [], 0
    for w, c in order:
        if acc / n >= target:
            break
        out.append(w)
        acc += c
    return frozenset(out), acc / n


def _good_turing(pool: Sequence[FreeWord]) -> float:
    counts: dict[FreeWord, int] = {}
    for w in pool:
        counts[w] = counts.get(w, 0) + 1
    return sum(1 for c in counts.values() if c == 1) / max(len(pool), 1)


@dataclass
class LadderBuild:
    ladder: ScaleLadder
    ssets: SSets
    specs: list
    pools: dict
    truncations: dict
    p: RecordMeasure
    gauge: Gauge
    notes: list

    @property
    def K(self) -> int:
        return self.ladder.K


def build_ladder(base: StepMeasure, p: RecordMeasure, phi: Gauge, K: int, seed: int, *,
                 samples: int = 500, multiplier: int = 2, horizon_cap: int = 10**6,
                 budget: int = 200_000) -> LadderBuild:
    """Build tau_0..tau_K, the S sets and the scale (Phi, Sigma, A).

    tau_k stops at the thinned switching set for
    F_k = (union_{i<k} S_{i,k})^{multiplier * Phi(k)}; S sets are the smallest
    empirical supports of ``samples`` draws with the required mass plus a 3
    sigma margin.  Elements of F_k are never targets.
    """
    if base != lazy_srw():
        raise NotImplementedError("ladders are built for the lazy walk on F2")
    lam = tuple(int(phi(n)) for n in range(K + 1))
    table: dict = {}
    mass: dict = {}
    required: dict = {}
    missing: dict = {}
    for j in range(K + 1):
        table[(0, j)] = frozenset({IDENTITY})
        mass[(0, j)] = 1.0
    specs: list = [Fixed()]
    pools: dict = {0: None}
    truncs: dict = {}
    A = [ProductSet((IDENTITY,), 1)]
    notes = []

    def s_set(i: int, j: int) -> frozenset:
        if (i, j) in table:
            return table[(i, j)]
        req = 1.0 - 2.0**-j * p.pmf(i) / max(lam[min(j, K)], 1)
        s, m = _smallest_support(pools[i], req)
        if j > i and (i, j - 1) in table:
            s = s | table[(i, j - 1)]
        table[(i, j)] = s
        mass[(i, j)] = m
        required[(i, j)] = req
        missing[(i, j)] = _good_turing(pools[i])
        return s

    for k in range(1, K + 1):
        gens = frozenset().union(*(s_set(i, k) for i in range(k)))
        gens_t = tuple(sorted(gens, key=lambda w: (len(w), w.letters)))
        A.append(ProductSet(gens_t, multiplier * lam[k]))
        F = sorted(_power(gens_t, multiplier * lam[k], budget), key=lambda w: (len(w), w.letters))
        sampler = switch_hit_stopping(base, F, key_of(seed, "thinning", k), horizon_cap, exclude_F=True)
        specs.append(sampler.spec)
        rng_key = key_of(seed, "tau", k)
        pool, nt = [], 0
        for t in range(samples):
            out = sampler.sample(Stream(rng_key, t))
            if out.truncated:
                nt += 1
                continue
            pool.append(out.endpoint)
        pools[k] = pool
        truncs[k] = nt
        s_set(k, k)
        for i in range(1, k):
            s_set(i, k)
        notes.append(f"tau_{k}: |F|={len(F)}, {len(set(pool))} distinct endpoints, {nt} truncated")
    for i in range(1, K + 1):
        for j in range(i, K + 1):
            s_set(i, j)
    sigma = tuple(table[(i, i)] for i in range(1, K + 1))
    ladder = ScaleLadder(lam, sigma, tuple(A), budget)
    return LadderBuild(ladder, SSets(table, mass, required, missing), specs, pools, truncs, p, phi, notes)


class LadderWalk:
    """The mixture walk of a built ladder.  Component-k increments (k >= 1)
    are drawn uniformly from the stored sample pool of tau_k."""

    def __init__(self, build: LadderBuild):
        self.build = build
        self.weights = build.p.truncated(build.K)
        self.cdf = np.cumsum(self.weights)
        self.cdf[-1] = 1.0
        self.pools = {k: list(v) for k, v in build.pools.items() if v}

    def step(self, rng: Stream) -> tuple[int, FreeWord]:
        i = int(np.searchsorted(self.cdf, rng.random(), side="right"))
        i = min(i, self.build.K)
        if i == 0 or not self.pools.get(i):
            c = int(FG_TABLE[rng.u64() >> 61])
            return 0, IDENTITY if c < 0 else FreeWord("aAbB"[c])
        pool = self.pools[i]
        return i, pool[rng.below(len(pool))]

    def run(self, n: int, rng: Stream, start: FreeWord = IDENTITY):
        comps, incs, words = [], [], []
        g = start
        for _ in range(n):
            i, h = self.step(rng)
            g = fg_mul(g, h)
            comps.append(i)
            incs.append(h)
            words.append(g)
        return comps, incs, words


@dataclass
class ChainCheck:
    checks: int
    failures: int
    parent_checks: int
    parent_failures: int
    vertices: int
    double_decompositions: int


def descending_chain_check(build: LadderBuild, paths: int, n_steps: int, seed: int,
                           budget: int = 10**7, return_forest: bool = False):
    """On simulated trajectories: whenever a record k has w_n = a g_{T_k} b
    with a = w_{T_k - 1} and both a, b within Delta_{R_k}^{lambda(R_k)}, the
    spike decomposition of w_n must be exactly that one; consecutive record
    prefixes must be parent and child in the forest.  Every visited element is
    checked for a second decomposition.  With ``return_forest`` the forest
    built on all visited elements is returned as well."""
    L = build.ladder
    walk = LadderWalk(build)
    checks = fails = pchecks = pfails = doubles = 0
    seen: set[FreeWord] = set()
    for t in range(paths):
        comps, incs, words = walk.run(n_steps, Stream(key_of(seed, "chain"), t))
        tr = trace_records(comps)
        T = list(tr.record_times)
        R = list(tr.record_values)
        prefix_words = [IDENTITY] + words  # prefix_words[m] = w_m
        for w in words:
            if w not in seen:
                seen.add(w)
                if len(all_spike_decompositions(w, L, budget)) > 1:
                    doubles += 1
        chain = []
        for k, (Tk, Rk) in enumerate(zip(T, R)):
            if Rk < 1 or incs[Tk - 1] not in L.sigma[Rk - 1]:
                continue
            P = L.delta_power(Rk, L.lam_of(Rk))
            a = prefix_words[Tk - 1]
            if a not in P:
                continue
            end = T[k + 1] - 1 if k + 1 < len(T) else n_steps
            ok_all = True
            for m in range(Tk, end + 1):
                b = IDENTITY
                for h in incs[Tk: m]:
                    b = fg_mul(b, h)
                if b not in P:
                    ok_all = False
                    continue
                d = spike_decompose(prefix_words[m], L, budget)
                checks += 1
                if d is None or d.prefix != a or d.spike != incs[Tk - 1]:
                    fails += 1
            if ok_all:
                chain.append((k, Tk))
        for (k1, T1), (k2, T2) in zip(chain, chain[1:]):
            if k2 != k1 + 1:
                continue
            d = spike_decompose(prefix_words[T2 - 1], L, budget)
            pchecks += 1
            if d is None or d.prefix != prefix_words[T1 - 1]:
                pfails += 1
    forest = build_forest(seen, L, budget)
    chk = ChainCheck(checks, fails, pchecks, pfails, len(forest.vertices), doubles)
    return (chk, forest) if return_forest else chk


def _in_subtree(x: FreeWord, roots: frozenset, L: ScaleLadder, budget: int, memo: dict) -> bool:
    """Is ``x`` a descendant (or member) of the vertex set ``roots``?"""
    y = x
    steps = 0
    while True:
        if y in roots:
            return True
        if y in memo:
            d = memo[y]
        else:
            d = spike_decompose(y, L, budget)
            memo[y] = d
        if d is None:
            return False
        y = d.prefix
        steps += 1
        if steps > 10_000:
            raise CertificateViolation("ancestor chain did not terminate")


@dataclass
class RetentionEstimate:
    n: int
    estimate: float
    stderr: float
    paths: int
    horizon: int
    censored: int


def subtree_retention(build: LadderBuild, n: int, paths: int, horizon: int, seed: int,
                      budget: int = 10**7) -> RetentionEstimate:
    """P(the ladder walk from g ~ S_{n,n} stays in the family of descendants
    of g Delta_n^{Phi(n)} up to ``horizon``).

    Steps before the first increment of component >= n cannot leave the
    family and are not tested.  Paths that never use such a component are
    counted as retained and reported as censored.
    """
    L = build.ladder
    walk = LadderWalk(build)
    S = sorted(build.ssets.get(n, n), key=lambda w: (len(w), w.letters))
    window = L.delta_power(n, L.lam_of(n))
    memo: dict = {}
    kept = censored = 0
    for t in range(paths):
        rng = Stream(key_of(seed, "retention", n), t)
        g = S[rng.below(len(S))]
        roots = frozenset(fg_mul(g, w) for w in window)
        x = g
        ok, armed = True, False
        for _ in range(horizon):
            i, h = walk.step(rng)
            x = fg_mul(x, h)
            armed = armed or i >= n
            if armed and not _in_subtree(x, roots, L, budget, memo):
                ok = False
                break
        kept += ok
        censored += not armed
    est = kept / paths
    return RetentionEstimate(n, est, math.sqrt(est * (1 - est) / paths), paths, horizon, censored)


# ---------------------------------------------------------------------------
# optional-stopping gap


@dataclass
class OSGap:
    n: int
    depth: int
    lhs: float
    rhs: float
    gap: float
    ci: tuple
    percentile_ci: tuple
    cells: int
    pooled: int
    unresolved: float
    cauchy_schwarz_ok: bool


def _ratio_sum(nu: np.ndarray, nun: np.ndarray) -> float:
    a = nun / nun.sum()
    b = nu / nu.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a > 0, a * a / b, 0.0)
    return float(terms.sum())


def optional_stopping_gap(mix: Mixture, n: int, depth: int, paths: int, seed: int, *,
                          n_steps: int = 40, margin: int = 10, boots: int = 400,
                          min_count: int = 5) -> OSGap:
    """lhs = p(n) * sum_c nu_n(c)^2 / nu(c) against rhs = p(n).

    nu is the depth-d cylinder histogram of the mixture walk; nu_n is the same
    with the first increment forced to component n.  Both ensembles share the
    stream key, so a plain-step mixture gives identical histograms.  Cells with
    nu-count below ``min_count`` are pooled.  ``ci`` is the basic bootstrap
    interval for the gap from a paired bootstrap over path indices,
    ``percentile_ci`` the percentile interval from the same replicates.
    """
    pn = float(mix.p.truncated(mix.k_max)[n]) if n <= mix.k_max else 0.0
    keys_a, ok_a, _, _ = hitting_samples(mix, depth, n_steps, margin, paths, seed, label="os-gap")
    keys_b, ok_b, _, _ = hitting_samples(mix, depth, n_steps, margin, paths, seed, label="os-gap",
                                         force_first=n)
    ka = [k for k, o in zip(keys_a, ok_a) if o]
    kb = [k for k, o in zip(keys_b, ok_b) if o]
    cells = sorted(set(ka) | set(kb))
    idx = {c: i for i, c in enumerate(cells)}
    # per-path cell index, -1 when unresolved; path i of both ensembles shares its stream
    ia = np.array([idx[k] if o else -1 for k, o in zip(keys_a, ok_a)], dtype=np.int64)
    ib = np.array([idx[k] if o else -1 for k, o in zip(keys_b, ok_b)], dtype=np.int64)
    ca = np.bincount(ia[ia >= 0], minlength=len(cells)).astype(float)
    cb = np.bincount(ib[ib >= 0], minlength=len(cells)).astype(float)
    small = ca < min_count
    group = np.where(small, len(cells), np.arange(len(cells)))
    # relabel pooled cells
    _, group = np.unique(group, return_inverse=True)
    ng = int(group.max()) + 1 if group.size else 0
    nu = np.bincount(group, weights=ca, minlength=ng)
    nun = np.bincount(group, weights=cb, minlength=ng)
    if nu.sum() == 0 or nun.sum() == 0:
        raise EmptyCylinder("no resolved paths")
    ratio = _ratio_sum(nu, nun)
    lhs = pn * ratio
    gap = lhs - pn
    # Cauchy-Schwarz at histogram level: sum a^2/b >= (sum a)^2 / sum b = 1
    cs_ok = bool(ratio >= 1.0 - 1e-12)
    # paired bootstrap over path indices keeps the shared-stream coupling
    gen = np.random.Generator(np.random.PCG64(key_of(seed, "os-gap-boot", n)))
    ga = np.where(ia >= 0, group[np.maximum(ia, 0)], ng)
    gb = np.where(ib >= 0, group[np.maximum(ib, 0)], ng)
    reps = np.empty(boots)
    for bi in range(boots):
        pick = gen.integers(0, paths, paths)
        ra = np.bincount(ga[pick], minlength=ng + 1)[:ng].astype(float)
        rb = np.bincount(gb[pick], minlength=ng + 1)[:ng].astype(float)
        if ((ra == 0) & (rb > 0)).any():
            ra = ra + 0.5  # avoid infinite ratios in tiny resamples
        reps[bi] = pn * _ratio_sum(ra, rb) - pn
    lo, hi = np.quantile(reps, [0.025, 0.975])
    basic = (float(2 * gap - hi), float(2 * gap - lo))
    unresolved = 1.0 - (len(ka) + len(kb)) / (2 * paths)
    return OSGap(n, depth, lhs, pn, gap, basic, (float(lo), float(hi)), len(cells), int(small.sum()),
                 unresolved, cs_ok)
