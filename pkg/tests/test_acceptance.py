"""Acceptance criteria 1-11, each at its stated scale and tolerance.

Statistical experiments go through the CLI runners so that criterion 11 can
replay exactly the same configurations and compare the CSV artifacts.
"""

import itertools
import math
import random
import time

import numpy as np
import pytest

from artifact import cli
from artifact.groups import (
    IDENTITY,
    LL_IDENTITY,
    FreeWord,
    LampElem,
    Projection,
    SemigroupWord,
    fg_inv,
    fg_mul,
    ll_inv,
    ll_mul,
    project,
)
from artifact.ladder import build_forest, descending_chain_check
from artifact.measures import RecordMeasure, sum_diag_squares, trace_records
from artifact.switching import is_switching

pytestmark = pytest.mark.slow

RUNS: list[tuple[str, dict]] = []
INV = {"a": "A", "A": "a", "b": "B", "B": "b"}


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def run_cli(root, experiment, **overrides):
    flags = {k: str(v) for k, v in overrides.items()}
    cfg = cli.resolve_config(experiment, {}, {**flags, "out": str(root / "pass1")})
    report, _ = cli.run(experiment, cfg)
    RUNS.append((experiment, flags))
    return report


def rand_word(rnd, lo=0, hi=12):
    return FreeWord.parse("".join(rnd.choice("aAbB") for _ in range(rnd.randint(lo, hi))))


def rand_lamp(rnd):
    return LampElem(frozenset(rnd.sample(range(-15, 16), rnd.randint(0, 6))), rnd.randint(-15, 15))


def reduce_str(s):
    st = []
    for c in s:
        if st and st[-1] == INV[c]:
            st.pop()
        else:
            st.append(c)
    return "".join(st)


# 1 -------------------------------------------------------------------------


def test_criterion_1_algebra(verdict):
    t0 = time.perf_counter()
    rnd = random.Random(1)
    bad = 0
    for _ in range(10**4):
        u, v, w = rand_word(rnd), rand_word(rnd), rand_word(rnd)
        bad += fg_mul(fg_mul(u, v), w) != fg_mul(u, fg_mul(v, w))
        bad += fg_mul(u, fg_inv(u)) != IDENTITY or fg_mul(IDENTITY, u) != u
        # independent reduction of the concatenation
        bad += fg_mul(u, v).letters != reduce_str(u.letters + v.letters)
    for _ in range(10**4):
        x, y, z = rand_lamp(rnd), rand_lamp(rnd), rand_lamp(rnd)
        bad += ll_mul(ll_mul(x, y), z) != ll_mul(x, ll_mul(y, z))
        bad += ll_mul(x, ll_inv(x)) != LL_IDENTITY or ll_mul(LL_IDENTITY, x) != x
    for _ in range(10**4):
        u, v = rand_word(rnd), rand_word(rnd)
        bad += project(fg_mul(u, v)) != ll_mul(project(u), project(v))
    for _ in range(10**4):
        u = SemigroupWord("".join(rnd.choice("ab") for _ in range(rnd.randint(0, 12))))
        v = SemigroupWord("".join(rnd.choice("ab") for _ in range(rnd.randint(0, 12))))
        fs = Projection.FREE_SEMIGROUP
        bad += project(u * v, fs) != ll_mul(project(u, fs), project(v, fs))
    dt = time.perf_counter() - t0
    ok = verdict(1, bad == 0 and dt < 10, f"{bad} violations in 4x10^4 instances, {dt:.1f}s")
    assert ok


# 2 -------------------------------------------------------------------------


def naive_records(x):
    times, vals, best = [], [], None
    for i, v in enumerate(x, start=1):
        if best is None or v >= best:
            best = v
            times.append(i)
            vals.append(v)
    return times, vals


def test_criterion_2_records(verdict, out_root):
    t0 = time.perf_counter()
    p = RecordMeasure()
    gen = np.random.Generator(np.random.PCG64(2))
    mism = 0
    for _ in range(10**3):
        x = p.sample(gen, int(gen.integers(1, 200)))
        tr = trace_records(x)
        times, vals = naive_records(list(x))
        mism += list(tr.record_times) != times or list(tr.record_values) != vals
    rep = run_cli(out_root, "records", trials=10**4, horizon=10**6, k0="1,10", decay_n="10000,100000")
    inc = sum_diag_squares(p, 10**5) - sum_diag_squares(p, 10**4)
    dt = time.perf_counter() - t0
    v = rep["verdicts"]
    ns = rep["metrics"]["non_simple"]
    ok = verdict(2, mism == 0 and v["diag_sum_converges"] and v["eventually_simple"] and dt < 60,
                 f"{mism} trace mismatches, diag increase {inc:.2e}, non-simple {ns[0]:.4f} -> {ns[1]:.4f}, "
                 f"{dt:.0f}s")
    assert ok


# 3 -------------------------------------------------------------------------


def test_criterion_3_gauge(verdict, out_root):
    t0 = time.perf_counter()
    rep = run_cli(out_root, "gauge", trials=10**4, validation_trials=10**4, quantile=0.999, max_exceedance=0.002)
    dt = time.perf_counter() - t0
    ex = rep["metrics"]["exceedance"]
    ok = verdict(3, rep["passed"] and dt < 60, f"exceedance {ex:.5f} over {rep['metrics']['records']} records, "
                                               f"{dt:.0f}s")
    assert ok


# 4 -------------------------------------------------------------------------


def test_criterion_4_finiteness(verdict, out_root):
    t0 = time.perf_counter()
    rep = run_cli(out_root, "truncation", runs=10**4, horizon_cap=10**6)
    dt = time.perf_counter() - t0
    fr = rep["metrics"]["fractions"]
    ok = verdict(4, rep["passed"] and dt < 300,
                 "truncated fractions " + ", ".join(f"{f:.5f}" for f in fr) + f" (need < 1e-3), {dt:.0f}s")
    assert ok


# 5 -------------------------------------------------------------------------


def test_criterion_5_hitting(verdict, out_root):
    t0 = time.perf_counter()
    rep = run_cli(out_root, "hitting", depth=3, paths=10**5, alpha=0.01, control="drift")
    dt = time.perf_counter() - t0
    m = rep["metrics"]
    ok = verdict(5, rep["passed"] and dt < 300,
                 f"mu vs mutau p={m['pvalue']:.3f} tv={m['tv']:.4f}; drift control p={m['control_pvalue']:.2e}, "
                 f"{dt:.0f}s")
    assert ok


# 6 -------------------------------------------------------------------------


def test_criterion_6_lamps(verdict, out_root):
    t0 = time.perf_counter()
    rep = run_cli(out_root, "lamp-stability", window=0, functional_paths=10**5, min_stable=0.95,
                  max_plain_stable=0.9, functional_sigma=6)
    dt = time.perf_counter() - t0
    m, v = rep["metrics"], rep["verdicts"]
    ok = verdict(6, rep["passed"] and dt < 600,
                 f"mutau stable {m['mutau'][-1]:.3f} (need >= 0.95), plain {m['mu'][-1]:.3f} (need <= 0.9), "
                 f"functional gap {m['functional_gap']:.4f} = {m['functional_gap'] / m['functional_se']:.0f} se, "
                 f"{dt:.0f}s")
    assert ok


# 7 -------------------------------------------------------------------------


def test_criterion_7_harmonicity(verdict, out_root):
    t0 = time.perf_counter()
    rep = run_cli(out_root, "harmonicity", z=3)
    dt = time.perf_counter() - t0
    m = rep["metrics"]
    ok = verdict(7, rep["passed"] and dt < 600,
                 f"max |z| under mutau {m['max_z_mutau']:.2f}, under mu {m['max_z_mu']:.1f}, {dt:.0f}s")
    assert ok


# 8 -------------------------------------------------------------------------


def quadruple_oracle(A, F):
    for a1, a2 in itertools.product(A, A):
        for f1, f2, f3, f4 in itertools.product(F, repeat=4):
            lhs = reduce_str(f1.letters + a1.letters + f2.letters)
            rhs = reduce_str(f3.letters + a2.letters + f4.letters)
            if lhs == rhs and (f1, a1, f2) != (f3, a2, f4):
                return False
    return True


def test_criterion_8_switching(verdict, out_root):
    t0 = time.perf_counter()
    rnd = random.Random(8)
    mism = 0
    for _ in range(10**3):
        F = list({rand_word(rnd, 0, 2) for _ in range(rnd.randint(1, 4))})
        A = list({rand_word(rnd, 0, 5) for _ in range(rnd.randint(1, 4))})
        mism += is_switching(A, F)[0] != quadruple_oracle(A, F)
    freq = run_cli(out_root, "switching-freq", radius=1, n_list="40", paths=4000, min_frequency=0.99)
    stop = run_cli(out_root, "switch-stop", radius=1, samples=500)
    dt = time.perf_counter() - t0
    f = freq["metrics"]["frequency"][-1]
    ok = verdict(8, mism == 0 and freq["passed"] and stop["passed"] and dt < 300,
                 f"{mism} oracle mismatches; frequency at n=40 {f:.4f} (need >= 0.99); "
                 f"{stop['metrics']['distinct']} stopped endpoints, {stop['metrics']['not_switching']} "
                 f"not switching, {dt:.0f}s")
    assert ok


# 9 -------------------------------------------------------------------------


def test_criterion_9_ladder(verdict, out_root):
    t0 = time.perf_counter()
    lad = run_cli(out_root, "ladder", K=2)
    cfg = cli.resolve_config("ladder", {}, {"K": "2", "out": str(out_root / "scratch")})
    build = cli._ladder(cfg)
    chk, forest = descending_chain_check(build, 100, 60, seed=9, return_forest=True)
    # the forest on the stored samples of every tau_k, closed under prefixes
    pool_forest = build_forest({w for k, v in build.pools.items() if v for w in v}, build.ladder)
    dt = time.perf_counter() - t0
    ok = (lad["passed"] and chk.double_decompositions == 0 and chk.failures == 0 and chk.parent_failures == 0
          and chk.checks > 0 and dt < 600)
    ok = verdict(9, ok, f"certificate {lad['verdicts']['certificate']}, {chk.vertices} visited vertices, "
                        f"{len(pool_forest.vertices)} pool vertices, {chk.checks} chain checks, "
                        f"{chk.failures + chk.parent_failures} failures, {chk.double_decompositions} doubles, "
                        f"{dt:.0f}s")
    assert ok


# 10 ------------------------------------------------------------------------


def test_criterion_10_os_gap(verdict, out_root):
    t0 = time.perf_counter()
    rep = run_cli(out_root, "os-gap", n=2)
    dt = time.perf_counter() - t0
    m, v = rep["metrics"], rep["verdicts"]
    ok = verdict(10, rep["passed"] and dt < 600,
                 f"Cauchy-Schwarz {v['cauchy_schwarz']}, gap {m['gap']:.2e} CI "
                 f"[{m['ci'][0]:.2e}, {m['ci'][1]:.2e}] (must exclude 0), control gap {m['control_gap']}, {dt:.0f}s")
    assert ok


# 11 ------------------------------------------------------------------------


def test_criterion_11_reproducible(verdict, out_root):
    t0 = time.perf_counter()
    assert RUNS, "criterion 11 replays the runs of criteria 2-10"
    for experiment, flags in RUNS:
        cfg = cli.resolve_config(experiment, {}, {**flags, "out": str(out_root / "pass2"), "workers": "2"})
        cli.run(experiment, cfg)
    a = {p.relative_to(out_root / "pass1"): p.read_bytes() for p in (out_root / "pass1").rglob("*.csv")}
    b = {p.relative_to(out_root / "pass2"): p.read_bytes() for p in (out_root / "pass2").rglob("*.csv")}
    differ = sorted(str(k) for k in set(a) | set(b) if a.get(k) != b.get(k))
    dt = time.perf_counter() - t0
    ok = verdict(11, not differ and len(a) > 0,
                 f"{len(a)} CSV files replayed with workers=2, {len(differ)} differ {differ[:3]}, {dt:.0f}s")
    assert ok
