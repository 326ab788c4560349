"""Exact arithmetic for the free group F2, the free semigroup F2+ and the
lamplighter group Z wr Z/2Z, plus the projections onto the lamplighter.

Free words are stored as reduced strings over ``a, A, b, B`` where the
capital letter is the inverse.  Lamplighter elements are pairs
``(lamps, pos)`` with ``lamps`` the finite set of lit positions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Union

LETTERS = "aAbB"
INVERSE = {"a": "A", "A": "a", "b": "B", "B": "b"}
# integer codes used by the compiled kernels; inverse of code c is c ^ 1
CODE = {"a": 0, "A": 1, "b": 2, "B": 3}
_UNREDUCED = re.compile("aA|Aa|bB|Bb")
_NON_LETTER = re.compile("[^aAbB]")


def _cancel_length(u: str, v: str) -> int:
    n = min(len(u), len(v))
    k = 0
    while k < n and INVERSE[u[-1 - k]] == v[k]:
        k += 1
    return k


def reduce_letters(letters: Iterable[str]) -> str:
    stack: list[str] = []
    for c in letters:
        if c not in INVERSE:
            raise ValueError(f"not a letter of F2: {c!r}")
        if stack and stack[-1] == INVERSE[c]:
            stack.pop()
        else:
            stack.append(c)
    return "".join(stack)


@dataclass(frozen=True, order=True)
class FreeWord:
    """A reduced word in F2.  Construct with :meth:`parse` to reduce input."""

    letters: str = ""

    def __post_init__(self):
        if _NON_LETTER.search(self.letters):
            raise ValueError(f"not a word over aAbB: {self.letters!r}")
        if _UNREDUCED.search(self.letters):
            raise ValueError(f"word {self.letters!r} is not reduced")

    @classmethod
    def parse(cls, text: str) -> "FreeWord":
        text = text.strip()
        if text in ("", "e", "1"):
            return cls("")
        return cls(reduce_letters(text))

    @classmethod
    def from_codes(cls, codes) -> "FreeWord":
        return cls(reduce_letters(LETTERS[int(c)] for c in codes))

    def codes(self) -> list[int]:
        return [CODE[c] for c in self.letters]

    def __len__(self) -> int:
        return len(self.letters)

    def __iter__(self) -> Iterator[str]:
        return iter(self.letters)

    def __mul__(self, other: "FreeWord") -> "FreeWord":
        return fg_mul(self, other)

    def inverse(self) -> "FreeWord":
        return fg_inv(self)

    def prefix(self, d: int) -> "FreeWord":
        return _trusted(self.letters[:d])

    def canonical(self) -> str:
        return self.letters

    def __str__(self) -> str:
        return self.letters or "e"

    def __repr__(self) -> str:
        return f"FreeWord({self.letters!r})"


IDENTITY = FreeWord("")
GENERATORS = tuple(FreeWord(c) for c in LETTERS)


def _trusted(letters: str) -> FreeWord:
    # skip validation for strings that are reduced by construction
    w = object.__new__(FreeWord)
    object.__setattr__(w, "letters", letters)
    return w


_INV_TABLE = str.maketrans("aAbB", "AaBb")


def fg_mul(u: FreeWord, v: FreeWord) -> FreeWord:
    k = _cancel_length(u.letters, v.letters)
    return _trusted(u.letters[: len(u.letters) - k] + v.letters[k:])


def fg_inv(u: FreeWord) -> FreeWord:
    return _trusted(u.letters[::-1].translate(_INV_TABLE))


def fg_power(u: FreeWord, n: int) -> FreeWord:
    if n < 0:
        u, n = fg_inv(u), -n
    out = IDENTITY
    for _ in range(n):
        out = fg_mul(out, u)
    return out


def ball(radius: int) -> list[FreeWord]:
    """All reduced words of length <= radius, shortlex ordered."""
    words = [""]
    layer = [""]
    for _ in range(radius):
        layer = [w + c for w in layer for c in LETTERS if not (w and INVERSE[w[-1]] == c)]
        words.extend(layer)
    return [FreeWord(w) for w in words]


def sphere(radius: int) -> list[FreeWord]:
    return [w for w in ball(radius) if len(w) == radius]


@dataclass(frozen=True)
class SemigroupWord:
    """A positive word over ``a, b`` in the free semigroup F2+."""

    letters: str = ""

    def __post_init__(self):
        if set(self.letters) - {"a", "b"}:
            raise ValueError(f"semigroup words use only a, b: {self.letters!r}")

    def __mul__(self, other: "SemigroupWord") -> "SemigroupWord":
        return SemigroupWord(self.letters + other.letters)

    def __len__(self) -> int:
        return len(self.letters)

    def __str__(self) -> str:
        return self.letters or "e"


@dataclass(frozen=True)
class LampElem:
    """Lamplighter element: lit lamps (finite set of integers) and position."""

    lamps: frozenset = frozenset()
    pos: int = 0

    def __post_init__(self):
        if not isinstance(self.lamps, frozenset):
            object.__setattr__(self, "lamps", frozenset(self.lamps))

    def __mul__(self, other: "LampElem") -> "LampElem":
        return ll_mul(self, other)

    def inverse(self) -> "LampElem":
        return ll_inv(self)

    def canonical(self) -> str:
        inner = ",".join(str(i) for i in sorted(self.lamps))
        return f"L{{{inner}}}P{{{self.pos}}}"

    __str__ = canonical

    @classmethod
    def parse(cls, text: str) -> "LampElem":
        m = re.fullmatch(r"\s*L\{([^}]*)\}P\{(-?\d+)\}\s*", text)
        if m is None:
            raise ValueError(f"bad lamplighter text form: {text!r}")
        body = m.group(1).strip()
        lamps = frozenset(int(t) for t in body.split(",")) if body else frozenset()
        return cls(lamps, int(m.group(2)))


LL_IDENTITY = LampElem()


def ll_mul(x: LampElem, y: LampElem) -> LampElem:
    shifted = frozenset(i + x.pos for i in y.lamps)
    return LampElem(x.lamps ^ shifted, x.pos + y.pos)


def ll_inv(x: LampElem) -> LampElem:
    return LampElem(frozenset(i - x.pos for i in x.lamps), -x.pos)


class Projection(Enum):
    """Homomorphisms onto the lamplighter.

    ``FREE_GROUP``: a -> toggle at the current position, b -> step right.
    ``FREE_SEMIGROUP``: a -> step right, b -> toggle then step left.
    """

    FREE_GROUP = "free_group"
    FREE_SEMIGROUP = "free_semigroup"


_FG_IMAGE = {
    "a": LampElem(frozenset({0}), 0),
    "A": LampElem(frozenset({0}), 0),
    "b": LampElem(frozenset(), 1),
    "B": LampElem(frozenset(), -1),
}
_SG_IMAGE = {
    "a": LampElem(frozenset(), 1),
    "b": LampElem(frozenset({0}), -1),
}


def letter_image(letter: str, proj: Projection = Projection.FREE_GROUP) -> LampElem:
    table = _FG_IMAGE if proj is Projection.FREE_GROUP else _SG_IMAGE
    return table[letter]


def project(w: Union[FreeWord, SemigroupWord], proj: Projection | None = None) -> LampElem:
    if proj is None:
        proj = Projection.FREE_SEMIGROUP if isinstance(w, SemigroupWord) else Projection.FREE_GROUP
    if proj is Projection.FREE_SEMIGROUP and not isinstance(w, SemigroupWord):
        raise TypeError("the semigroup projection is defined on positive words")
    # fold with a mutable lamp set; same result as repeated ll_mul
    lamps: set[int] = set()
    pos = 0
    table = _FG_IMAGE if proj is Projection.FREE_GROUP else _SG_IMAGE
    for c in w.letters:
        g = table[c]
        for i in g.lamps:
            lamps ^= {i + pos}
        pos += g.pos
    return LampElem(frozenset(lamps), pos)


def canonical(x) -> str:
    """Canonical text form used for hashing and CSV output."""
    if isinstance(x, (FreeWord, LampElem)):
        return x.canonical()
    if isinstance(x, SemigroupWord):
        return x.letters
    raise TypeError(f"no canonical form for {type(x).__name__}")
