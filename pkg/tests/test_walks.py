import math

import numpy as np
import pytest

from artifact.groups import IDENTITY, LL_IDENTITY, FreeWord, LampElem
from artifact.measures import RecordMeasure, lazy_srw
from artifact.rng import Stream
from artifact.stopping import Fixed, LampClear, Mixture
from artifact.walks import (
    UNRESOLVED,
    CylinderHistogram,
    ConstantFunctional,
    DepthMismatch,
    LimitLampFunctional,
    avez_entropy_profile,
    boundary_cylinder,
    compare_hitting,
    default_test_points,
    hitting_histogram,
    lamp_stability,
    run_walk,
    test_harmonicity as harmonicity,
)


class LampIndicator:
    """f(x) = 1 if lamp 0 is on; computed exactly, so stderr is 0."""

    def estimate(self, x, label=""):
        return float(0 in x.lamps), 0.0


def test_run_walk_partial_products():
    t = run_walk(lazy_srw(), 30, IDENTITY, Stream.from_seed(1, "walk"))
    g = IDENTITY
    for h, p in zip(t.increments, t.partial_products):
        g = g * h
        assert g == p
    with pytest.raises(ValueError):
        run_walk(lazy_srw(), 0, IDENTITY, Stream.from_seed(1))


def test_boundary_cylinder():
    words = [FreeWord("a"), FreeWord("ab"), FreeWord("abb"), FreeWord("abA")]
    assert boundary_cylinder(words, 2) == FreeWord("ab")
    assert boundary_cylinder(words, 2, margin=2) == FreeWord("ab")
    assert boundary_cylinder(words, 2, margin=3) is UNRESOLVED
    assert boundary_cylinder(words, 4) is UNRESOLVED
    assert boundary_cylinder([FreeWord("ab"), FreeWord("b")], 1, margin=1) is UNRESOLVED


def test_histogram_validation():
    with pytest.raises(ValueError):
        CylinderHistogram(2, {"ab": 3}, 4)
    with pytest.raises(ValueError):
        CylinderHistogram(2, {"abb": 1}, 1)
    h = CylinderHistogram.from_prefixes(["ab", "ab", "ba"], 2)
    assert h.frequencies() == {"ab": 2 / 3, "ba": 1 / 3}
    with pytest.raises(DepthMismatch):
        compare_hitting(h, CylinderHistogram.from_prefixes(["a"], 1))


def test_compare_identical_histograms():
    h = CylinderHistogram.from_prefixes(["ab"] * 50 + ["ba"] * 50, 2)
    c = compare_hitting(h, h)
    assert c.tv == 0 and c.passed


def test_kernel_and_python_cylinders_agree():
    # dual route: compiled prefix ensemble against run_walk + boundary_cylinder
    depth, n, margin, paths = 2, 40, 10, 3000
    h1 = hitting_histogram(Mixture.plain(), depth, n, margin, paths, seed=2)
    keys = []
    for i in range(paths):
        t = run_walk(lazy_srw(), n, IDENTITY, Stream.from_seed(3, "py", index=i))
        c = boundary_cylinder(t, depth, margin)
        if c is not UNRESOLVED:
            keys.append(c.letters)
    h2 = CylinderHistogram.from_prefixes(keys, depth)
    assert compare_hitting(h1, h2).pvalue > 0.001
    # the unresolved fractions also agree
    u1, u2 = h1.unresolved / paths, 1 - len(keys) / paths
    assert abs(u1 - u2) < 4 * math.sqrt(u1 * (1 - u1) * 2 / paths)


def test_lamp_stability_shapes():
    rep = lamp_stability(Mixture.plain(), 64, 0, 2000, seed=1)
    assert rep.checkpoints == [8, 16, 32]
    f = rep.frequencies
    assert all(0 <= x <= 1 for x in f) and f[0] <= f[1] <= f[2]
    assert rep.truncations == 0


def test_harmonicity_constant_and_lamp():
    pts = default_test_points()
    assert len(pts) == 25 and len(set(pts)) == 25
    m = lazy_srw().pushforward()
    rep = harmonicity(ConstantFunctional(0.3), m, pts)
    assert rep.all_within() and max(abs(d) for d in rep.delta) < 1e-12
    rep = harmonicity(LampIndicator(), m, [LL_IDENTITY])
    assert rep.delta[0] == pytest.approx(0.25) and rep.any_outside()


def test_harmonicity_type_checks():
    mix = Mixture(RecordMeasure(), (Fixed(), LampClear(0, 0, 100)))
    with pytest.raises(TypeError):
        harmonicity(ConstantFunctional(1.0), mix, [LL_IDENTITY])
    with pytest.raises(TypeError):
        harmonicity(ConstantFunctional(1.0), object(), [LL_IDENTITY])


def test_limit_lamp_functional_cached():
    f = LimitLampFunctional(Mixture.plain(), paths=2000, n_steps=16, margin=4, seed=3)
    x = LampElem(frozenset({0}), 0)
    a = f.estimate(x)
    assert f.estimate(x) == a
    assert 0 < a[0] < 1 and a[1] > 0
    assert len(f.unresolved) == 1


def test_entropy_profile():
    m = lazy_srw().pushforward()
    prof = avez_entropy_profile(m, [1, 4, 16], 20000, seed=4)
    assert prof.per_step[0] == pytest.approx(m.entropy())
    assert prof.per_step[0] > prof.per_step[1] > prof.per_step[2] > 0
    assert all(mm >= h for mm, h in zip(prof.miller_madow, prof.per_step))
    assert np.all(np.diff(prof.support) > 0)
