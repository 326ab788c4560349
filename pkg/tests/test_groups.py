import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.groups import (
    IDENTITY,
    LL_IDENTITY,
    FreeWord,
    LampElem,
    Projection,
    SemigroupWord,
    ball,
    fg_inv,
    fg_mul,
    ll_inv,
    ll_mul,
    project,
    sphere,
)

letters = st.text(alphabet="aAbB", max_size=40).map(FreeWord.parse)
lamps = st.builds(
    LampElem,
    st.frozensets(st.integers(-20, 20), max_size=8),
    st.integers(-20, 20),
)


def test_mul_examples():
    assert fg_mul(FreeWord("ab"), FreeWord("Ba")) == FreeWord("aa")
    assert fg_mul(IDENTITY, FreeWord("abA")) == FreeWord("abA")
    assert fg_mul(FreeWord("abA"), FreeWord("aBA")) == IDENTITY


def test_inverse_examples():
    assert fg_inv(FreeWord("ab")) == FreeWord("BA")
    assert fg_inv(IDENTITY) == IDENTITY


def test_unreduced_rejected():
    with pytest.raises(ValueError):
        FreeWord("aA")
    with pytest.raises(ValueError):
        FreeWord("ax")
    assert FreeWord.parse("abBA") == IDENTITY


def test_canonical_forms():
    assert str(IDENTITY) == "e"
    x = LampElem(frozenset({2, -1}), 3)
    assert x.canonical() == "L{-1,2}P{3}"
    assert LampElem.parse(x.canonical()) == x
    assert LL_IDENTITY.canonical() == "L{}P{0}"


def test_ll_mul_examples():
    assert ll_mul(LampElem(frozenset(), 1), LampElem(frozenset({0}), 0)) == LampElem(frozenset({1}), 1)
    y = LampElem(frozenset({3}), -2)
    assert ll_mul(LL_IDENTITY, y) == y
    t = LampElem(frozenset({0}), 0)
    assert ll_mul(t, t) == LL_IDENTITY


def test_projection_examples():
    assert project(FreeWord("a")) == LampElem(frozenset({0}), 0)
    assert project(FreeWord("baB")) == LampElem(frozenset({1}), 0)
    assert project(FreeWord("aa")) == LL_IDENTITY  # not injective


def test_semigroup_projection():
    a = project(SemigroupWord("a"), Projection.FREE_SEMIGROUP)
    b = project(SemigroupWord("b"), Projection.FREE_SEMIGROUP)
    assert a == LampElem(frozenset(), 1)
    assert b == LampElem(frozenset({0}), -1)
    w = SemigroupWord("abba")
    assert project(w, Projection.FREE_SEMIGROUP) == ll_mul(ll_mul(ll_mul(a, b), b), a)


def test_wreath_relation():
    # conjugating a lamp by a translation shifts its index
    t = LampElem(frozenset(), 5)
    lamp = LampElem(frozenset({0}), 0)
    assert ll_mul(ll_mul(t, lamp), ll_inv(t)) == LampElem(frozenset({5}), 0)


def test_ball_sizes():
    assert [len(sphere(r)) for r in range(4)] == [1, 4, 12, 36]
    assert len(ball(2)) == 17


@settings(max_examples=300, deadline=None)
@given(letters, letters, letters)
def test_free_group_laws(u, v, w):
    assert fg_mul(fg_mul(u, v), w) == fg_mul(u, fg_mul(v, w))
    assert fg_mul(u, fg_inv(u)) == IDENTITY
    assert fg_inv(fg_inv(u)) == u
    assert len(fg_mul(u, v)) <= len(u) + len(v)


@settings(max_examples=300, deadline=None)
@given(lamps, lamps, lamps)
def test_lamplighter_laws(x, y, z):
    assert ll_mul(ll_mul(x, y), z) == ll_mul(x, ll_mul(y, z))
    assert ll_mul(x, ll_inv(x)) == LL_IDENTITY
    assert ll_mul(LL_IDENTITY, x) == x == ll_mul(x, LL_IDENTITY)


@settings(max_examples=300, deadline=None)
@given(letters, letters)
def test_projection_homomorphism(u, v):
    assert project(fg_mul(u, v)) == ll_mul(project(u), project(v))


def test_semigroup_homomorphism_random():
    rnd = random.Random(3)
    for _ in range(200):
        u = SemigroupWord("".join(rnd.choice("ab") for _ in range(rnd.randint(0, 30))))
        v = SemigroupWord("".join(rnd.choice("ab") for _ in range(rnd.randint(0, 30))))
        lhs = project(u * v, Projection.FREE_SEMIGROUP)
        assert lhs == ll_mul(project(u, Projection.FREE_SEMIGROUP), project(v, Projection.FREE_SEMIGROUP))
