import math

import numpy as np
import pytest
from scipy import stats

from artifact.groups import IDENTITY, FreeWord, LampElem, Projection, SemigroupWord, project
from artifact.measures import (
    Gauge,
    RecordMeasure,
    StepMeasure,
    lazy_semigroup_walk,
    lazy_srw,
    point_mass,
)
from artifact.rng import Stream
from artifact.stopping import (
    Calibration,
    CalibrationDiverged,
    CalibrationMismatch,
    Fixed,
    LampClear,
    Mixture,
    calibrate,
    containment_frequency,
    lamp_clear_truncation,
    run_to_stop,
    sample_mu_tau,
)

# the lazy walk with its atoms listed in another order: same law, but it is
# not recognised by the compiled path and runs through the Python stepper
SHUFFLED = StepMeasure(
    (FreeWord("B"), FreeWord("b"), FreeWord("A"), FreeWord("a"), IDENTITY),
    (0.125, 0.125, 0.125, 0.125, 0.5),
)


def lamps_clear(x: LampElem, s: int, r: int) -> bool:
    return abs(x.pos) >= r and not any(-s <= i <= s for i in x.lamps)


def test_fixed_is_one_step():
    for t in range(50):
        out = run_to_stop(lazy_srw(), Fixed(), None, Stream.from_seed(1, "fixed", index=t))
        assert out.steps_used == 1 and len(out.endpoint) <= 1 and not out.truncated


def test_lamp_clear_first_step_b():
    out = run_to_stop(point_mass(FreeWord("b")), LampClear(0, 0), None, Stream.from_seed(0, "b"))
    assert out.steps_used == 1
    assert out.endpoint == FreeWord("b")


def test_lamp_clear_validation():
    with pytest.raises(ValueError):
        LampClear(-1, 0)


def test_stopped_states_satisfy_predicate():
    for s, r in ((0, 0), (1, 3), (2, 2)):
        for t in range(300):
            out = run_to_stop(lazy_srw(), LampClear(s, r, 10**5), None, Stream.from_seed(2, s, r, index=t))
            if out.truncated:
                assert out.steps_used == 10**5
                continue
            assert out.projected == project(out.endpoint)
            assert lamps_clear(out.projected, s, r)


def test_semigroup_variant():
    for t in range(200):
        out = run_to_stop(lazy_semigroup_walk(), LampClear(1, 2, 10**5), None, Stream.from_seed(3, index=t))
        assert isinstance(out.endpoint, SemigroupWord)
        if not out.truncated:
            assert lamps_clear(project(out.endpoint, Projection.FREE_SEMIGROUP), 1, 2)
    with pytest.raises(TypeError):
        run_to_stop(lazy_srw(), LampClear(0, 0), Projection.FREE_SEMIGROUP, Stream.from_seed(3))


def test_compiled_and_python_steppers_agree_in_law():
    # dual route: the numba kernel and the pure Python stepper
    n = 1500
    a = [run_to_stop(lazy_srw(), LampClear(1, 3, 300), None, Stream.from_seed(4, "k", index=t)) for t in range(n)]
    b = [run_to_stop(SHUFFLED, LampClear(1, 3, 300), None, Stream.from_seed(4, "p", index=t)) for t in range(n)]
    sa = np.array([x.steps_used for x in a])
    sb = np.array([x.steps_used for x in b])
    assert stats.ks_2samp(sa, sb).pvalue > 0.001
    pa = np.array([x.projected.pos for x in a])
    pb = np.array([x.projected.pos for x in b])
    assert stats.ks_2samp(pa, pb).pvalue > 0.001


def test_lamp_clear_zero_truncation():
    # after a toggle of lamp 0 the walk must come back to 0, so the tail
    # decays like t**-1/2; about 1.3e-3 survives 1e5 steps, 4e-4 survives 1e6
    frac, ok, _ = lamp_clear_truncation(0, 0, 10**4, 10**6, seed=5)
    assert frac < 1e-3 and ok


def test_stream_reproducible():
    a = run_to_stop(lazy_srw(), LampClear(1, 3), None, Stream.from_seed(9, index=4))
    b = run_to_stop(lazy_srw(), LampClear(1, 3), None, Stream.from_seed(9, index=4))
    assert a == b


def test_mixture_component_zero_must_be_fixed():
    with pytest.raises(ValueError):
        Mixture(RecordMeasure(), (LampClear(0, 0),))


def test_mixture_component_frequencies():
    mix = Mixture(RecordMeasure(), (Fixed(), LampClear(0, 0, 10**4), LampClear(1, 3, 10**4)))
    n = 20000
    comps = np.zeros(3)
    e_hits = 0
    for t in range(n):
        out = sample_mu_tau(lazy_srw(), mix, Stream.from_seed(6, "mix", index=t))
        comps[out.component_index] += 1
        e_hits += out.endpoint == IDENTITY
    w = mix.weights
    assert stats.chisquare(comps, n * w).pvalue > 0.01
    # laziness of component 0 alone gives P(e) >= p(0)/2
    lb = w[0] / 2
    assert e_hits / n >= lb - 3 * math.sqrt(lb * (1 - lb) / n)


def test_plain_mixture_is_mu():
    out = sample_mu_tau(lazy_srw(), Mixture.plain(), Stream.from_seed(1))
    assert out.component_index == 0 and out.steps_used == 1


def test_calibration_contract(tmp_path):
    cal = calibrate(RecordMeasure(), Gauge.constant([1, 1, 2]), 3, seed=3, quantile=0.999, trials=100,
                    sequences=16)
    assert cal.s[0] == cal.r[0] == 0
    for k in range(1, cal.k_max):
        assert cal.r[k] == 3 * cal.s[k]
        assert cal.s[k] >= cal.s[k - 1]
    for k in range(1, cal.k_max - 1):
        assert cal.s[k] < cal.r[k] < cal.s[k + 1]
    for k in range(2, cal.k_max + 1):
        level = 1 - 2.0**-k
        q = containment_frequency(cal, k, 200, seed=99)
        assert q >= level - 3 * math.sqrt(level * (1 - level) / 200)
    path = tmp_path / "cal.txt"
    cal.save(path)
    back = Calibration.load(path, seed=3, quantile=0.999)
    assert (back.s, back.r, back.phi) == (cal.s, cal.r, cal.phi)
    with pytest.raises(CalibrationMismatch):
        Calibration.load(path, seed=4)
    with pytest.raises(CalibrationMismatch):
        Calibration.load(path, quantile=0.99)


def test_calibration_errors():
    with pytest.raises(ValueError):
        calibrate(RecordMeasure(), Gauge.constant([1]), 1)
    with pytest.raises(CalibrationDiverged):
        calibrate(RecordMeasure(), Gauge.constant([1, 1, 64]), 3, ceiling=2, trials=50, sequences=4)
