"""Command-line experiment runner.

Every experiment reads a flat ``key = value`` config (file and/or flags),
writes CSV artifacts plus one ``report.json`` into ``<out>/<experiment>/`` and
exits 0 on pass, 2 on a statistical failure and 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .groups import FreeWord, LampElem, ball, project
from .measures import (
    Gauge,
    RecordMeasure,
    fit_gauge,
    gauge_exceedance,
    lazy_srw,
    non_simple_decay,
    simulate_record_chain,
    simple_flags,
    sum_diag_squares,
)
from .rng import Stream, key_of
from .stopping import (
    FG_TABLE,
    Calibration,
    LampClear,
    Mixture,
    calibrate,
    lamp_clear_truncation,
)
from .walks import (
    LimitLampFunctional,
    CylinderHistogram,
    avez_entropy_profile,
    compare_hitting,
    default_test_points,
    hitting_samples,
    lamp_stability,
    run_walk,
    test_harmonicity,
)

SCHEMA_VERSION = 1
OUT_ENV = "ARTIFACT_OUT"
DRIFT_TABLE = np.array([0, 0, 0, -1, 0, 1, 2, 3], dtype=np.int64)

COMMON = {
    "seed": 1,
    "out": "",
    "workers": 1,
    "calibration": "",
    "quantile": 0.999,
}

# Defaults are desk scale: the whole acceptance suite fits in half an hour on one core.
EXPERIMENTS: dict[str, dict] = {
    "calibrate": {"k_max": 2, "phi": "1", "quantile": 0.999, "safety": 2.0, "sequences": 256,
                  "trials": 400, "gauge_trials": 10000, "gauge_horizon": 10**6},
    "records": {"trials": 10000, "horizon": 10**6, "k0": "1,5,10", "decay_n": "10000,100000",
                "max_decay_increase": 1e-4, "z": 3.0, "csv_traces": 20},
    "gauge": {"trials": 10000, "horizon": 10**6, "quantile": 0.999, "mode": "absolute",
              "min_count": 200, "validation_trials": 10000, "max_exceedance": 0.002},
    "walk": {"measure": "mutau", "n_steps": 50, "horizon_cap": 2000},
    "hitting": {"depth": 3, "paths": 100000, "alpha": 0.01, "mu_steps": 400, "mu_margin": 100,
                "tau_steps": 40, "tau_margin": 10, "horizon_cap": 10**4, "control": "drift"},
    "lamp-stability": {"n_steps": 64, "window": 0, "paths": 20000, "horizon_cap": 10**4,
                       "min_stable": 0.95, "max_plain_stable": 0.9, "functional_paths": 100000,
                       "functional_steps": 32, "functional_sigma": 6.0},
    "harmonicity": {"n_steps": 24, "margin": 4, "paths": 20000, "horizon_cap": 2000, "z": 3.0},
    "entropy": {"n_list": "1,4,16,64", "paths": 20000},
    "switching-freq": {"radius": 1, "n_list": "10,20,40", "paths": 2000, "min_frequency": 0.99},
    "coset-decay": {"generator": "ab", "radius": 1, "n_list": "2,4,8,16", "paths": 4000},
    "switch-stop": {"radius": 1, "samples": 500, "horizon_cap": 10**6, "exclude_F": 0},
    "ladder": {"K": 2, "phi": "1,1,1", "samples": 300, "multiplier": 2, "horizon_cap": 10**6},
    "forest": {"K": 2, "phi": "1,1,1", "samples": 300, "multiplier": 2, "horizon_cap": 10**6,
               "paths": 100, "n_steps": 60},
    "retention": {"K": 2, "phi": "1,1,1", "samples": 300, "multiplier": 2, "horizon_cap": 10**6,
                  "paths": 400, "horizon": 20},
    "os-gap": {"n": 2, "depth": 3, "paths": 50000, "n_steps": 40, "margin": 10, "boots": 400,
               "horizon_cap": 2000},
    "truncation": {"runs": 10000, "horizon_cap": 10**6},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes")
    try:
        if isinstance(default, int):
            return int(float(value)) if "e" in str(value).lower() else int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {value!r}") from exc
    return str(value)


def resolve_config(experiment: str, file_values: dict, flag_values: dict) -> dict:
    defaults = {**COMMON, **EXPERIMENTS[experiment]}
    unknown = (set(file_values) | set(flag_values)) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys for {experiment}: {', '.join(sorted(unknown))}")
    cfg = {}
    for k, d in defaults.items():
        v = flag_values.get(k, file_values.get(k, d))
        cfg[k] = _coerce(k, v, d)
    if not cfg["out"]:
        cfg["out"] = os.environ.get(OUT_ENV, "artifact-out")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma separated integer list, got {text!r}") from exc


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


# ---------------------------------------------------------------------------
# shared constructions


def _phi(text: str, cfg: dict) -> Gauge:
    if text == "fit":
        gen = np.random.Generator(np.random.PCG64(key_of(cfg["seed"], "gauge-fit")))
        return fit_gauge(RecordMeasure(), cfg["gauge_trials"], cfg["gauge_horizon"], cfg["quantile"], gen)
    vals = _ints(text)
    if not vals:
        raise ConfigError("phi needs at least one value")
    # the last listed value repeats, so "1" means Phi = 1 at every level
    need = cfg.get("k_max", cfg.get("K", 0)) + 1
    return Gauge.constant(vals + [vals[-1]] * max(0, need - len(vals)))


def _calibration(cfg: dict) -> Calibration:
    path = cfg["calibration"]
    if path:
        if not Path(path).exists():
            raise ConfigError(f"calibration file {path} does not exist")
        return Calibration.load(path, seed=cfg["seed"], quantile=cfg["quantile"])
    # no file: the desk calibration, computed in memory and never written
    return calibrate(RecordMeasure(), Gauge.constant([1, 1, 1]), 2, seed=cfg["seed"], quantile=cfg["quantile"])


def _mixture(cfg: dict, accept: bool = True) -> Mixture:
    return Mixture.from_calibration(_calibration(cfg), horizon_cap=cfg["horizon_cap"],
                                    reject_truncated=not accept)


def _chunk_hitting(args):
    mix, depth, n_steps, margin, count, seed, table, label, first = args
    return hitting_samples(mix, depth, n_steps, margin, count, seed, table=table, label=label, first=first)


def _hitting_parallel(mix, depth, n_steps, margin, paths, seed, table, label, workers) -> CylinderHistogram:
    """Histogram over ``paths`` walks; results do not depend on ``workers``
    because path i always uses stream (key, i)."""
    size = -(-paths // workers)
    jobs = [(mix, depth, n_steps, margin, min(size, paths - f), seed, table, label, f)
            for f in range(0, paths, size)]
    if workers == 1:
        parts = [_chunk_hitting(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_chunk_hitting, jobs))
    keys, resolved, steps, trunc = [], [], 0, 0
    for k, r, s, t in parts:
        keys += k
        resolved.append(r)
        steps += s
        trunc += t
    resolved = np.concatenate(resolved)
    good = [k for k, ok in zip(keys, resolved) if ok]
    return CylinderHistogram.from_prefixes(good, depth, unresolved=int((~resolved).sum()),
                                           base_steps=steps, truncations=trunc)


def _ladder(cfg: dict):
    from .ladder import build_ladder

    phi = _phi(cfg["phi"], cfg)
    return build_ladder(lazy_srw(), RecordMeasure(), phi, cfg["K"], cfg["seed"], samples=cfg["samples"],
                        multiplier=cfg["multiplier"], horizon_cap=cfg["horizon_cap"])


# ---------------------------------------------------------------------------
# experiments; each returns (metrics, verdicts)


def exp_calibrate(cfg, out: Path):
    phi = _phi(cfg["phi"], cfg)
    cal = calibrate(RecordMeasure(), phi, cfg["k_max"], seed=cfg["seed"], sequences=cfg["sequences"],
                    trials=cfg["trials"], safety=cfg["safety"], quantile=cfg["quantile"])
    cal.save(out / "calibration.txt")
    write_csv(out / "calibration.csv", ["k", "s_k", "r_k", "phi_k", "achieved"], cal.rows())
    ok = all(a >= 1 - 2.0**-k for k, _, _, _, a in cal.rows() if k >= 2)
    return {"s": cal.s, "r": cal.r, "phi": cal.phi, "achieved": cal.achieved, "notes": cal.notes}, \
        {"containment": ok}


def exp_records(cfg, out: Path):
    p = RecordMeasure()
    gen = np.random.Generator(np.random.PCG64(key_of(cfg["seed"], "records")))
    rows = []
    for t in range(cfg["csv_traces"]):
        times, vals = simulate_record_chain(p, gen, cfg["horizon"])
        for k, (T, R, s) in enumerate(zip(times, vals, simple_flags(vals))):
            rows.append((t, k, T, R, s))
    write_csv(out / "records.csv", ["trace", "k", "T_k", "R_k", "simple"], rows)
    dec = non_simple_decay(p, cfg["trials"], cfg["horizon"], gen, _ints(cfg["k0"]))
    write_csv(out / "decay.csv", ["k0", "non_simple", "stderr", "records"],
              zip(dec.k0, dec.non_simple, dec.stderr, dec.records))
    ns = _ints(cfg["decay_n"])
    sums = [sum_diag_squares(p, n) for n in ns]
    write_csv(out / "diag_squares.csv", ["N", "sum_p_ii_squared"], zip(ns, sums))
    z = cfg["z"]
    lo, hi = 0, len(dec.k0) - 1
    diff = dec.non_simple[lo] - dec.non_simple[hi]
    se = math.hypot(dec.stderr[lo], dec.stderr[hi])
    return (
        {"non_simple": dec.non_simple, "stderr": dec.stderr, "diag_sums": sums},
        {
            "diag_sum_converges": bool(sums[-1] - sums[0] < cfg["max_decay_increase"]),
            "eventually_simple": bool(diff > z * se),
        },
    )


def exp_gauge(cfg, out: Path):
    p = RecordMeasure()
    g = fit_gauge(p, cfg["trials"], cfg["horizon"], cfg["quantile"],
                  np.random.Generator(np.random.PCG64(key_of(cfg["seed"], "gauge-fit"))),
                  mode=cfg["mode"], min_count=cfg["min_count"])
    g.write_csv(out / "gauge.csv")
    ex, tot = gauge_exceedance(p, g, cfg["validation_trials"], cfg["horizon"],
                               np.random.Generator(np.random.PCG64(key_of(cfg["seed"], "gauge-check"))))
    freq = ex / max(tot, 1)
    write_csv(out / "gauge_validation.csv", ["exceed", "total", "frequency"], [(ex, tot, freq)])
    return {"exceedance": freq, "records": tot, "table_size": int(g.table.size)}, \
        {"exceedance": bool(freq <= cfg["max_exceedance"])}


def exp_walk(cfg, out: Path):
    rng = Stream.from_seed(cfg["seed"], "walk")
    if cfg["measure"] == "mu":
        traj = run_walk(lazy_srw(), cfg["n_steps"], FreeWord(""), rng)
    elif cfg["measure"] == "mutau":
        traj = run_walk(_mixture(cfg), cfg["n_steps"], FreeWord(""), rng)
    else:
        raise ConfigError("measure must be mu or mutau")
    write_csv(out / "trajectory.csv", ["i", "increment", "word", "projected"],
              ((i + 1, str(h), str(w), project(w).canonical())
               for i, (h, w) in enumerate(zip(traj.increments, traj.partial_products))))
    return {"final_length": len(traj.endpoint)}, {}


def exp_hitting(cfg, out: Path):
    d, seed, w = cfg["depth"], cfg["seed"], cfg["workers"]
    mix = _mixture(cfg)
    h_mu = _hitting_parallel(Mixture.plain(), d, cfg["mu_steps"], cfg["mu_margin"], cfg["paths"], seed,
                             FG_TABLE, "hitting-mu", w)
    h_tau = _hitting_parallel(mix, d, cfg["tau_steps"], cfg["tau_margin"], cfg["paths"], seed,
                              FG_TABLE, "hitting-tau", w)
    cmp = compare_hitting(h_mu, h_tau, cfg["alpha"])
    metrics = {"tv": cmp.tv, "chi2": cmp.chi2, "dof": cmp.dof, "pvalue": cmp.pvalue,
               "unresolved_mu": h_mu.unresolved / cfg["paths"], "unresolved_tau": h_tau.unresolved / cfg["paths"],
               "truncations_tau": h_tau.truncations}
    verdicts = {"same_hitting_measure": cmp.passed}
    hists = [("mu", h_mu), ("mutau", h_tau)]
    if cfg["control"] == "drift":
        h_c = _hitting_parallel(Mixture.plain(), d, cfg["mu_steps"], cfg["mu_margin"], cfg["paths"], seed,
                                DRIFT_TABLE, "hitting-control", w)
        ctl = compare_hitting(h_mu, h_c, cfg["alpha"])
        metrics.update(control_tv=ctl.tv, control_pvalue=ctl.pvalue)
        verdicts["control_detected"] = not ctl.passed
        hists.append(("drift", h_c))
    keys = sorted(set().union(*(h.counts for _, h in hists)))
    write_csv(out / "hitting.csv", ["cylinder"] + [n for n, _ in hists],
              ([k] + [h.counts.get(k, 0) for _, h in hists] for k in keys))
    return metrics, verdicts


def exp_lamp_stability(cfg, out: Path):
    mix = _mixture(cfg)
    n = cfg["n_steps"]
    rep = lamp_stability(mix, n, cfg["window"], cfg["paths"], cfg["seed"], label="stability-tau")
    base_per_path = max(1, round(rep.base_steps / rep.paths))
    plain = lamp_stability(Mixture.plain(), base_per_path, cfg["window"], cfg["paths"], cfg["seed"],
                           checkpoints=[max(1, round(j * base_per_path / n)) for j in rep.checkpoints],
                           label="stability-mu")
    f = LimitLampFunctional(mix, 0, cfg["functional_steps"], 8, cfg["functional_paths"], cfg["seed"])
    f0, s0 = f.estimate(LampElem(frozenset(), 0))
    f1, s1 = f.estimate(LampElem(frozenset({0}), 0))
    gap, se = abs(f0 - f1), math.hypot(s0, s1)
    write_csv(out / "lamp_stability.csv", ["walk", "checkpoint", "frequency"],
              [("mutau", j, q) for j, q in rep.rows()] + [("mu", j, q) for j, q in plain.rows()])
    write_csv(out / "limit_lamp.csv", ["start", "estimate", "stderr"],
              [("L{}P{0}", f0, s0), ("L{0}P{0}", f1, s1)])
    return (
        {"mutau": rep.frequencies, "mu": plain.frequencies, "base_steps_per_path": base_per_path,
         "functional_gap": gap, "functional_se": se, "truncations": rep.truncations},
        {
            "mutau_stabilises": bool(rep.frequencies[-1] >= cfg["min_stable"]),
            "mu_does_not": bool(plain.frequencies[-1] <= cfg["max_plain_stable"]),
            "functional_nonconstant": bool(gap > cfg["functional_sigma"] * se),
        },
    )


def exp_harmonicity(cfg, out: Path):
    mix = _mixture(cfg)
    f = LimitLampFunctional(mix, 0, cfg["n_steps"], cfg["margin"], cfg["paths"], cfg["seed"])
    pts = default_test_points()
    r_mu = test_harmonicity(f, lazy_srw().pushforward(), pts)
    r_tau = test_harmonicity(f, mix, pts)
    rows = []
    for tag, r in (("mu", r_mu), ("mutau", r_tau)):
        for x, d, s, z in zip(r.points, r.delta, r.stderr, r.z()):
            rows.append((tag, x.canonical(), d, s, z))
    write_csv(out / "harmonicity.csv", ["measure", "point", "delta", "stderr", "z"], rows)
    k = cfg["z"]
    return (
        {"max_z_mu": float(r_mu.z().max()), "max_z_mutau": float(r_tau.z().max()),
         "unresolved": float(np.mean(list(f.unresolved.values())))},
        {"mutau_harmonic": r_tau.all_within(k), "mu_not_harmonic": r_mu.any_outside(k)},
    )


def exp_entropy(cfg, out: Path):
    prof = avez_entropy_profile(lazy_srw().pushforward(), _ints(cfg["n_list"]), cfg["paths"], cfg["seed"])
    write_csv(out / "entropy.csv", ["n", "plugin_per_step", "miller_madow_per_step", "support"],
              zip(prof.n_list, prof.per_step, prof.miller_madow, prof.support))
    return {"per_step": prof.per_step, "note": prof.note}, {}


def exp_switching_freq(cfg, out: Path):
    from .switching import switching_frequency

    est = switching_frequency(lazy_srw(), ball(cfg["radius"]), _ints(cfg["n_list"]), cfg["paths"], cfg["seed"])
    write_csv(out / "switching_frequency.csv", ["n", "frequency", "stderr", "paths"],
              ((e.n, e.estimate, e.stderr, e.paths) for e in est))
    return {"frequency": [e.estimate for e in est]}, \
        {"switching_at_largest_n": bool(est[-1].estimate >= cfg["min_frequency"])}


def exp_coset_decay(cfg, out: Path):
    from .switching import coset_decay, cyclic_membership

    est = coset_decay(lazy_srw(), cyclic_membership(FreeWord.parse(cfg["generator"])), ball(cfg["radius"]),
                      _ints(cfg["n_list"]), cfg["paths"], cfg["seed"])
    write_csv(out / "coset_decay.csv", ["n", "frequency", "stderr", "paths"],
              ((e.n, e.estimate, e.stderr, e.paths) for e in est))
    return {"frequency": [e.estimate for e in est]}, {}


def exp_switch_stop(cfg, out: Path):
    from .switching import is_switching, switch_hit_stopping

    F = ball(cfg["radius"])
    samp = switch_hit_stopping(lazy_srw(), F, key_of(cfg["seed"], "thinning"), cfg["horizon_cap"],
                               exclude_F=bool(cfg["exclude_F"]))
    key = key_of(cfg["seed"], "switch-stop")
    seen: dict = {}
    t = trunc = 0
    rows = []
    while len(seen) < cfg["samples"] and t < 50 * cfg["samples"]:
        s = samp.sample(Stream(key, t))
        t += 1
        if s.truncated:
            trunc += 1
            continue
        rows.append((t - 1, s.steps_used, str(s.endpoint)))
        seen.setdefault(s.endpoint, 0)
        seen[s.endpoint] += 1
    bad = [w for w in seen if not is_switching((w,), samp.F)[0]]
    write_csv(out / "switch_stop.csv", ["trial", "steps", "endpoint"], rows)
    return {"distinct": len(seen), "draws": t, "truncated": trunc, "not_switching": len(bad)}, \
        {"support_switching": not bad and len(seen) >= cfg["samples"]}


def exp_ladder(cfg, out: Path):
    b = _ladder(cfg)
    (out / "ladder.txt").write_text(b.ladder.to_text())
    cert = b.ladder.certificate()
    write_csv(out / "certificate.csv", ["n", "disjoint", "delta_power_size"], cert)
    write_csv(out / "s_sets.csv", ["i", "j", "size", "mass", "required", "missing_mass"],
              ((i, j, len(s), b.ssets.mass[(i, j)], b.ssets.required.get((i, j), 1.0),
                b.ssets.missing_mass.get((i, j), 0.0)) for (i, j), s in sorted(b.ssets.table.items())))
    return {"notes": b.notes, "sigma_sizes": [len(s) for s in b.ladder.sigma]}, \
        {"certificate": all(ok for _, ok, _ in cert)}


def exp_forest(cfg, out: Path):
    from .ladder import CertificateViolation, descending_chain_check

    b = _ladder(cfg)
    try:
        chk, forest = descending_chain_check(b, cfg["paths"], cfg["n_steps"], cfg["seed"], return_forest=True)
    except CertificateViolation as exc:
        return {"violation": str(exc)}, {"forest": False}
    (out / "forest_edges.txt").write_text(forest.edge_list_text())
    write_csv(out / "chain_check.csv", ["checks", "failures", "parent_checks", "parent_failures", "vertices",
                                        "double_decompositions"],
              [(chk.checks, chk.failures, chk.parent_checks, chk.parent_failures, chk.vertices,
                chk.double_decompositions)])
    return vars(chk), {"forest": chk.double_decompositions == 0,
                       "descending_chain": chk.failures == 0 and chk.parent_failures == 0}


def exp_retention(cfg, out: Path):
    from .ladder import subtree_retention

    b = _ladder(cfg)
    est = [subtree_retention(b, n, cfg["paths"], cfg["horizon"], cfg["seed"]) for n in range(1, b.K + 1)]
    write_csv(out / "retention.csv", ["n", "estimate", "stderr", "paths", "horizon", "censored"],
              ((e.n, e.estimate, e.stderr, e.paths, e.horizon, e.censored) for e in est))
    return {"estimates": [e.estimate for e in est]}, {"trend": bool(est[-1].estimate >= est[0].estimate)}


def exp_os_gap(cfg, out: Path):
    from .ladder import optional_stopping_gap

    mix = _mixture(cfg)
    g = optional_stopping_gap(mix, cfg["n"], cfg["depth"], cfg["paths"], cfg["seed"], n_steps=cfg["n_steps"],
                              margin=cfg["margin"], boots=cfg["boots"])
    ctl = optional_stopping_gap(Mixture.plain(), 0, cfg["depth"], cfg["paths"], cfg["seed"],
                                n_steps=cfg["n_steps"], margin=cfg["margin"], boots=cfg["boots"])
    write_csv(out / "os_gap.csv", ["run", "n", "lhs", "rhs", "gap", "ci_low", "ci_high", "pct_low", "pct_high",
                                   "cells", "pooled", "unresolved"],
              [(name, r.n, r.lhs, r.rhs, r.gap, *r.ci, *r.percentile_ci, r.cells, r.pooled, r.unresolved)
               for name, r in (("mutau", g), ("fixed", ctl))])
    return (
        {"gap": g.gap, "ci": list(g.ci), "percentile_ci": list(g.percentile_ci), "control_gap": ctl.gap},
        {"cauchy_schwarz": g.cauchy_schwarz_ok and ctl.cauchy_schwarz_ok, "gap_positive": g.ci[0] > 0,
         "control_exact": ctl.gap == 0.0},
    )


def exp_truncation(cfg, out: Path):
    cal = _calibration(cfg)
    rows = []
    ok = True
    for k, s, r, _, _ in cal.rows():
        frac, pred, _ = lamp_clear_truncation(s, r, cfg["runs"], cfg["horizon_cap"], cfg["seed"])
        rows.append((k, s, r, frac, pred))
        ok = ok and frac < 1e-3 and pred
    write_csv(out / "truncation.csv", ["k", "s_k", "r_k", "truncated_fraction", "predicate_ok"], rows)
    return {"fractions": [r[3] for r in rows]}, {"finite": ok}


RUNNERS = {
    "calibrate": exp_calibrate,
    "records": exp_records,
    "gauge": exp_gauge,
    "walk": exp_walk,
    "hitting": exp_hitting,
    "lamp-stability": exp_lamp_stability,
    "harmonicity": exp_harmonicity,
    "entropy": exp_entropy,
    "switching-freq": exp_switching_freq,
    "coset-decay": exp_coset_decay,
    "switch-stop": exp_switch_stop,
    "ladder": exp_ladder,
    "forest": exp_forest,
    "retention": exp_retention,
    "os-gap": exp_os_gap,
    "truncation": exp_truncation,
}


# ---------------------------------------------------------------------------
# entry point


def run(experiment: str, cfg: dict) -> tuple[dict, int]:
    out = Path(cfg["out"]) / experiment
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    metrics, verdicts = RUNNERS[experiment](cfg, out)
    report = {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "experiment": experiment,
        "config": cfg,
        "metrics": metrics,
        "verdicts": verdicts,
        "passed": all(verdicts.values()),
        "wall_seconds": time.perf_counter() - t0,
    }
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    return report, 0 if report["passed"] else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name, extra in EXPERIMENTS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file")
        for k, d in {**COMMON, **extra}.items():
            sp.add_argument("--" + k.replace("_", "-"), dest=k, default=None, metavar=type(d).__name__.upper())
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("experiment", "config")}
    try:
        file_values = parse_config_text(Path(args.config).read_text()) if args.config else {}
        cfg = resolve_config(args.experiment, file_values, flags)
        report, code = run(args.experiment, cfg)
    except Exception as exc:  # noqa: BLE001 - any failure is an infrastructure error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    status = "PASS" if code == 0 else "FAIL"
    print(f"{status} {args.experiment} " + " ".join(f"{k}={v}" for k, v in report["verdicts"].items()))
    return code


if __name__ == "__main__":
    sys.exit(main())
