"""Stopping rules for the base walk, their calibration and the mixture mu_tau."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import _kernels as K
from .groups import (
    IDENTITY,
    FreeWord,
    LampElem,
    Projection,
    SemigroupWord,
    project,
)
from .measures import Gauge, RecordMeasure, StepMeasure, lazy_semigroup_walk, lazy_srw, sample_step
from .rng import Stream, key_of

DEFAULT_CAP = 10**6

FG_TABLE = np.array([-1, -1, -1, -1, 0, 1, 2, 3], dtype=np.int8)
SG_TABLE = np.array([-1, -1, -1, -1, 0, 0, 2, 2], dtype=np.int8)


class CalibrationDiverged(RuntimeError):
    pass


class CalibrationMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Fixed:
    """tau = 1: a single base step."""

    def label(self) -> str:
        return "Fixed(1)"


@dataclass(frozen=True)
class LampClear:
    """First t >= 1 with no lit lamp in [-s, s] (relative to the start) and
    displacement at least r."""

    s: int
    r: int
    horizon_cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.s < 0 or self.r < 0 or self.horizon_cap < 1:
            raise ValueError("LampClear needs s, r >= 0 and a positive cap")

    def label(self) -> str:
        return f"LampClear({self.s},{self.r})"


@dataclass(frozen=True)
class SwitchHit:
    """First hit of the hash-thinned set of F-switching elements."""

    F: tuple
    seed: int
    horizon_cap: int = DEFAULT_CAP
    exclude_F: bool = False
    symmetric: bool = False

    def label(self) -> str:
        return f"SwitchHit(|F|={len(self.F)})"


@dataclass(frozen=True)
class Mixture:
    """mu_tau = sum_i p(i) mu_{tau_i}; indices above k_max are redrawn from
    p conditioned on {0..k_max}."""

    p: RecordMeasure
    specs: tuple
    reject_truncated: bool = True

    def __post_init__(self):
        if not self.specs or not isinstance(self.specs[0], Fixed):
            raise ValueError("component 0 of a mixture must be Fixed(1)")

    @property
    def k_max(self) -> int:
        return len(self.specs) - 1

    @property
    def weights(self) -> np.ndarray:
        return self.p.truncated(self.k_max)

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c

    @property
    def kernel_ready(self) -> bool:
        return all(isinstance(s, (Fixed, LampClear)) for s in self.specs)

    def arrays(self):
        """(cdf, kinds, s, r, cap) for the compiled mixture kernels."""
        if not self.kernel_ready:
            raise TypeError("only Fixed and LampClear components run in the compiled kernels")
        kinds = np.array([0 if isinstance(c, Fixed) else 1 for c in self.specs], dtype=np.int64)
        s = np.array([getattr(c, "s", 0) for c in self.specs], dtype=np.int64)
        r = np.array([getattr(c, "r", 0) for c in self.specs], dtype=np.int64)
        caps = [c.horizon_cap for c in self.specs if isinstance(c, LampClear)]
        cap = max(caps) if caps else 1
        return self.cdf, kinds, s, r, cap

    @classmethod
    def plain(cls) -> "Mixture":
        return cls(RecordMeasure.delta(0), (Fixed(),))

    @classmethod
    def from_calibration(cls, cal: "Calibration", p: RecordMeasure | None = None,
                         horizon_cap: int = DEFAULT_CAP, reject_truncated: bool = True) -> "Mixture":
        specs = [Fixed()] + [LampClear(int(s), int(r), horizon_cap) for s, r in zip(cal.s, cal.r)]
        return cls(p or RecordMeasure(), tuple(specs), reject_truncated)


StoppingSpec = Union[Fixed, LampClear, SwitchHit, Mixture]


@dataclass
class StoppedSample:
    endpoint: object
    steps_used: int
    component_index: int
    truncated: bool
    projected: LampElem | None = None


def _table_for(base: StepMeasure) -> tuple[np.ndarray, bool]:
    if base == lazy_srw():
        return FG_TABLE, False
    if base == lazy_semigroup_walk():
        return SG_TABLE, True
    raise NotImplementedError("compiled stepping supports the lazy walks on F2 and F2+")


def _word_of(codes, semigroup: bool):
    letters = "".join("aAbB"[int(c)] for c in codes)
    return SemigroupWord(letters) if semigroup else FreeWord(letters)


def _run_generic(base: StepMeasure, spec, proj, rng: Stream) -> StoppedSample:
    """Pure Python stepping, used for base measures without a kernel table."""
    g = IDENTITY if base.group == "free_group" else SemigroupWord("")
    if isinstance(spec, Fixed):
        g = g * sample_step(base, rng)
        return StoppedSample(g, 1, 0, False, project(g, proj))
    lamps: set[int] = set()
    pos = 0
    for t in range(1, spec.horizon_cap + 1):
        h = sample_step(base, rng)
        g = g * h
        x = project(h, proj)
        for i in x.lamps:
            lamps ^= {pos + i}
        pos += x.pos
        if abs(pos) >= spec.r and not any(-spec.s <= i <= spec.s for i in lamps):
            return StoppedSample(g, t, 0, False, LampElem(frozenset(lamps), pos))
    return StoppedSample(g, spec.horizon_cap, 0, True, LampElem(frozenset(lamps), pos))


def run_to_stop(base: StepMeasure, spec: StoppingSpec, proj: Projection | None, rng: Stream) -> StoppedSample:
    """Run the base walk from the identity until the rule fires or the cap is hit.

    Truncation is reported in the sample, never raised.
    """
    if isinstance(spec, Mixture):
        return sample_mu_tau(base, spec, rng)
    if isinstance(spec, SwitchHit):
        from .switching import switch_hit_stopping

        return switch_hit_stopping(base, spec.F, spec.seed, spec.horizon_cap,
                                   exclude_F=spec.exclude_F, symmetric=spec.symmetric).sample(rng)
    try:
        table, semigroup = _table_for(base)
    except NotImplementedError:
        return _run_generic(base, spec, proj, rng)
    if proj is None:
        proj = Projection.FREE_SEMIGROUP if semigroup else Projection.FREE_GROUP
    if (proj is Projection.FREE_SEMIGROUP) != semigroup:
        raise TypeError("projection variant does not match the base walk")
    if isinstance(spec, Fixed):
        kinds, s, r, cap = np.array([0]), np.array([0]), np.array([0]), 1
    else:
        kinds, s, r, cap = np.array([1]), np.array([spec.s]), np.array([spec.r]), spec.horizon_cap
    word, _, _, _, steps, trunc, _ = K.mutau_path(
        rng.state, table, np.array([1.0]), kinds, s, r, cap, False, 1, -1, semigroup,
        np.empty(0, np.int64), 0, np.empty(0, np.int8), 0, 0, 0,
    )
    g = _word_of(word, semigroup)
    return StoppedSample(g, int(steps), 0, bool(trunc), project(g, proj))


def sample_mu_tau(base: StepMeasure, mix: Mixture, rng: Stream) -> StoppedSample:
    """One mu_tau increment: draw i from p (conditioned on i <= k_max), run tau_i.

    Truncated runs are redrawn with the same component when the mixture says so;
    ``truncated`` then records whether any redraw happened.
    """
    i = int(np.searchsorted(mix.cdf, rng.random(), side="right"))
    i = min(i, mix.k_max)
    spec = mix.specs[i]
    used = 0
    redrawn = False
    while True:
        out = run_to_stop(base, spec, None, rng)
        used += out.steps_used
        if not out.truncated or not mix.reject_truncated:
            break
        redrawn = True
    return StoppedSample(out.endpoint, used, i, redrawn or out.truncated, out.projected)


# ---------------------------------------------------------------------------
# calibration


@dataclass
class Calibration:
    k_max: int
    s: list
    r: list
    phi: list
    achieved: list
    seed: int
    quantile: float
    safety: float = 2.0
    notes: list = field(default_factory=list)

    def rows(self):
        for k in range(1, self.k_max + 1):
            yield k, self.s[k - 1], self.r[k - 1], self.phi[k - 1], self.achieved[k - 1]

    def save(self, path) -> None:
        lines = [f"# seed={self.seed} quantile={self.quantile!r} k_max={self.k_max} safety={self.safety!r}",
                 "# k s_k r_k Phi_k achieved_confidence"]
        for k, s, r, phi, a in self.rows():
            lines.append(f"{k} {s} {r} {phi} {a:.6f}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, *, seed: int | None = None, quantile: float | None = None) -> "Calibration":
        text = Path(path).read_text().splitlines()
        head = dict(kv.split("=", 1) for kv in text[0].lstrip("# ").split())
        cal = cls(int(head["k_max"]), [], [], [], [], int(head["seed"]), float(head["quantile"]),
                  float(head.get("safety", 2.0)))
        for line in text[1:]:
            if not line.strip() or line.startswith("#"):
                continue
            k, s, r, phi, a = line.split()
            cal.s.append(int(s))
            cal.r.append(int(r))
            cal.phi.append(int(phi))
            cal.achieved.append(float(a))
        if len(cal.s) != cal.k_max:
            raise ValueError(f"calibration file lists {len(cal.s)} levels, header says {cal.k_max}")
        if seed is not None and seed != cal.seed:
            raise CalibrationMismatch(f"calibration seed {cal.seed} does not match config seed {seed}")
        if quantile is not None and not math.isclose(quantile, cal.quantile):
            raise CalibrationMismatch(f"calibration quantile {cal.quantile} does not match config {quantile}")
        return cal


def _extents(key: int, seq: np.ndarray, kinds, s, r, cap: int, trials: int, first: int = 0):
    out = np.empty(trials, dtype=np.int64)
    trunc = 0
    for t in range(trials):
        st = K.seed_state(np.uint64(key), np.uint64(first + t))
        out[t], tr = K.extent_run(st, FG_TABLE, seq, kinds, s, r, cap, True)
        trunc += tr
    return out, trunc


def calibrate(
    p: RecordMeasure,
    phi: Gauge,
    k_max: int,
    confidence: float | None = None,
    seed: int = 0,
    *,
    sequences: int = 256,
    trials: int = 400,
    safety: float = 2.0,
    ceiling: int = 4096,
    cap: int = 10**4,
    quantile: float | None = None,
) -> Calibration:
    """Choose (s_k, r_k) level by level.

    For each k >= 2 we simulate products of Phi(k) increments whose component
    indices come from the homogeneous sequence (k-1, ..., k-1) and from
    ``sequences`` random sequences in {1..k-1}; the smallest s with every
    prefix's lamp support inside [-s/3, s/3] at frequency >= 1 - 2^-k (or the
    given ``confidence``) is 3 * (that quantile of the extent).  The result is
    multiplied by ``safety``, forced monotone and interleaved (s_k > r_{k-1}),
    and r_k = 3 s_k.
    """
    if k_max < 2:
        raise ValueError("calibration needs k_max >= 2")
    s_list, r_list, phi_list, achieved = [0], [0], [int(phi(1))], [1.0]
    notes = []
    for k in range(2, k_max + 1):
        level = confidence if confidence is not None else 1.0 - 2.0**-k
        n_inc = int(phi(k))
        specs_s = np.array([0] + s_list, dtype=np.int64)
        specs_r = np.array([0] + r_list, dtype=np.int64)
        kinds = np.array([0] + [1] * len(s_list), dtype=np.int64)
        gen = np.random.Generator(np.random.PCG64(key_of(seed, "calibrate-seq", k)))
        seqs = [np.full(n_inc, k - 1, dtype=np.int64)]
        if k > 2:
            seqs += [gen.integers(1, k, size=n_inc) for _ in range(sequences)]
        worst = 0
        for j, seq in enumerate(seqs):
            per = trials if j == 0 else max(trials // 8, 16)
            ext, _ = _extents(key_of(seed, "calibrate", k, j), seq, kinds, specs_s, specs_r, cap, per)
            need = int(math.ceil(np.quantile(ext, level, method="higher")))
            worst = max(worst, need)
        s_k = int(math.ceil(3 * worst * safety))
        s_k = max(s_k, s_list[-1], r_list[-1] + 1)
        if s_k > ceiling:
            raise CalibrationDiverged(f"s_{k} = {s_k} exceeds the ceiling {ceiling}")
        s_list.append(s_k)
        r_list.append(3 * s_k)
        phi_list.append(n_inc)
        # achieved containment on the homogeneous sequence, fresh seed
        ext, _ = _extents(key_of(seed, "calibrate-check", k), seqs[0], kinds, specs_s, specs_r, cap, trials)
        achieved.append(float(np.mean(3 * ext <= s_k)))
        notes.append(f"k={k}: extent quantile {worst}, level {level:.4f}")
    return Calibration(k_max, s_list, r_list, phi_list, achieved, seed,
                       quantile if quantile is not None else phi.quantile, safety, notes)


def containment_frequency(cal: Calibration, k: int, trials: int, seed: int, cap: int = 10**4) -> float:
    """Fresh-seed re-simulation of the level-k containment event."""
    kinds = np.array([0] + [1] * (k - 1), dtype=np.int64)
    s = np.array([0] + cal.s[: k - 1], dtype=np.int64)
    r = np.array([0] + cal.r[: k - 1], dtype=np.int64)
    seq = np.full(cal.phi[k - 1], k - 1, dtype=np.int64)
    ext, _ = _extents(key_of(seed, "containment", k), seq, kinds, s, r, cap, trials)
    return float(np.mean(3 * ext <= cal.s[k - 1]))


def lamp_clear_truncation(s: int, r: int, runs: int, cap: int, seed: int, semigroup: bool = False):
    """(truncation fraction, all non-truncated endpoints satisfy the predicate)."""
    steps, trunc, _, ok = K.lamp_clear_ensemble(np.uint64(key_of(seed, "lc", s, r)), 0, runs, s, r, cap, semigroup)
    return float(trunc.mean()), bool(ok[~trunc].all()), steps
