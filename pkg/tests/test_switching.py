import itertools
import random
from fractions import Fraction

import pytest

from artifact.groups import IDENTITY, FreeWord, ball, fg_inv, fg_mul, sphere
from artifact.measures import lazy_srw
from artifact.rng import Stream
from artifact.switching import (
    coset_decay,
    cyclic_membership,
    finite_set,
    is_superswitching,
    is_switching,
    kernel_membership,
    power_set,
    switch_hit_stopping,
    switching_frequency,
    uniform_of,
    word_hash,
    walk_words,
)

# exact P(w_40 is ball(1)-switching) for the lazy walk, frozen from an
# independent evaluation: the word length of w_n is a birth-death chain and the
# switching fraction of the sphere of radius L is 1 - 3^(2-L) for L >= 3
SWITCH_40 = 0.9760264847961757
INV = {"a": "A", "A": "a", "b": "B", "B": "b"}


def reduce_str(s):
    st = []
    for c in s:
        if st and st[-1] == INV[c]:
            st.pop()
        else:
            st.append(c)
    return "".join(st)


def naive_switching(w, F):
    seen = set()
    for f1, f2 in itertools.product(F, F):
        x = reduce_str(f1 + w + f2)
        if x in seen:
            return False
        seen.add(x)
    return True


def length_law(n):
    dist = [Fraction(1)] + [Fraction(0)] * (n + 1)
    for _ in range(n):
        nd = [Fraction(0)] * (n + 2)
        for L, p in enumerate(dist):
            if not p:
                continue
            nd[L] += p / 2
            if L == 0:
                nd[1] += p / 2
            else:
                nd[L + 1] += p * 3 / 8
                nd[L - 1] += p / 8
        dist = nd
    return dist


def test_sets():
    F = finite_set(["a", "b"], symmetric=True)
    assert set(F) == set(ball(1)) - {IDENTITY}
    assert len(power_set(ball(1), 2)) == len(ball(2))


def test_switching_matches_naive():
    F = [w.letters for w in ball(1)]
    for L in range(6):
        for w in sphere(L):
            assert is_switching((w,), ball(1))[0] == naive_switching(w.letters, F)


def test_sphere_fractions():
    for L in range(3, 8):
        S = sphere(L)
        good = sum(is_switching((w,), ball(1))[0] for w in S)
        assert Fraction(good, len(S)) == 1 - Fraction(1, 3 ** (L - 2))


def test_counterexample_is_witness():
    ok, (t1, t2) = is_switching((FreeWord("ab"),), ball(1))
    assert not ok and t1 != t2
    assert fg_mul(fg_mul(t1[0], t1[1]), t1[2]) == fg_mul(fg_mul(t2[0], t2[1]), t2[2])


def test_superswitching_matches_naive():
    F = [w.letters for w in ball(1)]

    def naive(g):
        seen = set()
        for a in (g.letters, fg_inv(g).letters):
            for f1, f2 in itertools.product(F, F):
                x = reduce_str(f1 + a + f2)
                if x in seen:
                    return False
                seen.add(x)
        return True

    verdicts = [is_superswitching(g, ball(1))[0] for g in sphere(4)]
    assert verdicts == [naive(g) for g in sphere(4)]
    assert any(verdicts) and not all(verdicts)


def test_exact_frequency_oracle():
    dist = length_law(40)
    val = sum(float(p) * (1 - 3.0 ** (2 - L)) for L, p in enumerate(dist) if L >= 3)
    assert val == pytest.approx(SWITCH_40, abs=1e-12)


def test_switching_frequency_estimate():
    (est,) = switching_frequency(lazy_srw(), ball(1), [40], 4000, seed=1)
    assert abs(est.estimate - SWITCH_40) < 4 * est.stderr


def test_walk_word_lengths():
    # mean length of w_20 against the exact chain
    dist = length_law(20)
    mean = float(sum(L * p for L, p in enumerate(dist)))
    var = float(sum(L * L * p for L, p in enumerate(dist))) - mean**2
    words = walk_words(20, 5000, seed=2)
    got = sum(map(len, words)) / len(words)
    assert abs(got - mean) < 4 * (var / len(words)) ** 0.5


def test_hash_is_polynomial():
    h1, h2 = word_hash(FreeWord("ab"))
    assert h1 == (1 * 911382323 + 3) % (10**9 + 7)
    assert uniform_of(5, FreeWord("ab")) == uniform_of(5, FreeWord("ab"))
    assert uniform_of(5, FreeWord("ab")) != uniform_of(6, FreeWord("ab"))


def test_in_target_kernel_agrees_with_reference():
    s = switch_hit_stopping(lazy_srw(), ["a", "b"], seed=11, horizon_cap=10**4)
    rnd = random.Random(4)
    words = list(ball(3))
    for _ in range(200):
        words.append(FreeWord.parse("".join(rnd.choice("aAbB") for _ in range(rnd.randint(4, 25)))))
    for w in words:
        assert s.in_target(w) == s.in_target_kernel(w), w
    ex = switch_hit_stopping(lazy_srw(), ["a", "b"], seed=11, exclude_F=True)
    assert not any(ex.in_target(f) for f in ex.F)


def test_switch_hit_kernel_matches_python_stepper():
    s = switch_hit_stopping(lazy_srw(), ["a", "b"], seed=3, horizon_cap=2000)
    for i in range(15):
        a = s.sample(Stream.from_seed(8, index=i))
        b = s._sample_python(Stream.from_seed(8, index=i))
        assert a.endpoint == b.endpoint and a.steps_used == b.steps_used
        if not a.truncated:
            assert s.in_target(a.endpoint)


def test_symmetric_variant_stops_on_inverses():
    s = switch_hit_stopping(lazy_srw(), ["a", "b"], seed=3, horizon_cap=2000, symmetric=True)
    for i in range(20):
        out = s.sample(Stream.from_seed(9, index=i))
        if not out.truncated:
            assert s.in_target(out.endpoint) or s.in_target(fg_inv(out.endpoint))


def test_cyclic_membership():
    g = FreeWord("aabA")
    member = cyclic_membership(g)
    x = IDENTITY
    for _ in range(4):
        assert member(x) and member(fg_inv(x))
        x = fg_mul(x, g)
    assert not member(FreeWord("a")) and not member(FreeWord("ab"))
    assert cyclic_membership(IDENTITY)(IDENTITY)


def test_coset_decay_monotone():
    out = coset_decay(lazy_srw(), kernel_membership, ball(1), [4, 16, 64], 3000, seed=5)
    e = [o.estimate for o in out]
    assert e[0] > e[1] > e[2]
    assert kernel_membership(FreeWord("aa")) and not kernel_membership(FreeWord("a"))
