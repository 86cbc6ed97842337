"""The acceptance suite: twelve oracle and invariant checks.

Every check compares the main code path against something computed another
way: closed forms, quadrature, brute-force enumeration, or an independent
re-scan. ``quick`` shrinks trial counts; ``full`` uses the stated ones.
"""
from __future__ import annotations

import itertools
import json
import math
import tempfile
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize
from scipy.stats import norm

from .._rng import make_rng, stream_id
from ..extremes import borell_envelope, check_level_set_inequality, estimate_sup_stats, free_energy_batch
from ..fields import (
    FieldSample,
    as_explicit,
    build_block,
    build_directed_polymer,
    build_explicit,
    build_independent,
    build_shifted,
    build_sk,
    orthonormal,
)
from ..geometry import check_var_exp, estimate_surface_profile
from ..martingale import (
    default_grid,
    exact_tail_shifted,
    quadratic_variation,
    simulate_doob_path,
    simulate_doob_paths,
    tail_agreement,
    tail_experiment,
)
from ..peaks import PeakQuery, extract_peaks, peak_sizes
from .config import config_from_dict
from .runner import _plain, run

PROFILES = ("quick", "full")


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    seconds: float = 0.0
    details: dict = dc_field(default_factory=dict, repr=False)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.number:2d}. {self.title}: {self.summary} ({self.seconds:.1f}s)"


def _n(profile: str, full: int, quick: int) -> int:
    return full if profile == "full" else quick


def _zoo_enumerable():
    rng = make_rng(2024, stream_id("acceptance/zoo"))
    raw = rng.standard_normal((12, 12))
    return {
        "independent-32": build_independent(32),
        "block-8x16": build_block(8, 16),
        "shifted-64": build_shifted(64, 1.0),
        "polymer-5": build_directed_polymer(5),
        "sk-8": build_sk(8),
        "explicit-12": build_explicit(factor=raw / np.linalg.norm(raw, axis=1, keepdims=True)),
    }


# -- 1 -----------------------------------------------------------------------


def closed_form_moments(profile: str, seed: int) -> CriterionResult:
    trials = 10**6
    st = estimate_sup_stats(build_independent(2), trials, seed, tag="acc/moments")
    m_ref, v_ref = 1 / math.sqrt(math.pi), 1 - 1 / math.pi
    ok = abs(st.m_hat - m_ref) <= 0.005 and abs(st.var_hat - v_ref) <= 0.01
    return CriterionResult(
        1,
        "closed-form moments, N=2",
        ok,
        f"m={st.m_hat:.5f} (ref {m_ref:.5f}), var={st.var_hat:.5f} (ref {v_ref:.5f})",
        details=st.summary(),
    )


# -- 2 -----------------------------------------------------------------------


def borell_tail(profile: str, seed: int) -> CriterionResult:
    trials = _n(profile, 10**5, 20_000)
    st = estimate_sup_stats(build_independent(1024), trials, seed, tag="acc/borell")
    rows = borell_envelope(st, 1.0, [0.5, 1.0, 1.5, 2.0])
    worst = max(r["frequency"] - r["bound"] for r in rows)
    return CriterionResult(
        2,
        "Borell-TIS envelope, N=1024",
        all(r["pass"] for r in rows),
        f"max(freq - bound) = {worst:.4f} over z in 0.5..2",
        details={"rows": rows},
    )


# -- 3 -----------------------------------------------------------------------


def free_energy_sandwich(profile: str, seed: int) -> CriterionResult:
    samples = 10**4
    betas = [0.5, 1.0, 5.0, 50.0]
    violations = 0
    checked = 0
    for k, (name, field) in enumerate(_zoo_enumerable().items()):
        vals = field.values(field.draw_drivers(make_rng(seed, stream_id("acc/sandwich", k)), samples // 6 + 1))
        M = vals.max(axis=1)
        for b in betas:
            F = free_energy_batch(vals, b)
            tol = 1e-12 * (1.0 + np.abs(M))
            violations += int(np.count_nonzero(F < M))
            violations += int(np.count_nonzero(F > M + math.log(field.size) / b + tol))
            checked += F.size
    return CriterionResult(
        3, "free-energy sandwich", violations == 0, f"{violations} violations in {checked} (sample, beta) pairs"
    )


# -- 4 -----------------------------------------------------------------------


def _polymer_brute(n: int, driver: np.ndarray) -> float:
    best = -math.inf
    for rpos in itertools.combinations(range(2 * n), n):
        x = y = 0
        total = 0.0
        rset = set(rpos)
        for step in range(2 * n):
            if step in rset:
                total += driver[x * (n + 1) + y]
                x += 1
            else:
                total += driver[n * (n + 1) + x * n + y]
                y += 1
        best = max(best, total)
    return best


def _sk_naive(n: int, Z: np.ndarray) -> float:
    best = -math.inf
    for spins in itertools.product((1.0, -1.0), repeat=n):
        s = np.array(spins)
        best = max(best, float(s @ Z @ s) / math.sqrt(2 * n))
    return best


def dp_equivalence(profile: str, seed: int) -> CriterionResult:
    mismatches = 0
    worst = 0.0
    for n in range(2, 7):
        f = build_directed_polymer(n)
        drivers = f.draw_drivers(make_rng(seed, stream_id("acc/dp", n)), 100)
        vals, arg = f.supremum(drivers)
        for d, v, a in zip(drivers, vals, arg):
            ref = _polymer_brute(n, d)
            gap = max(abs(v - ref), abs(f.value_of(d, a) - ref))
            worst = max(worst, gap)
            mismatches += gap > 1e-9
    for n in range(4, 11):
        f = build_sk(n)
        drivers = f.draw_drivers(make_rng(seed, stream_id("acc/gray", n)), 100)
        vals, arg = f.supremum(drivers)
        for d, v, a in zip(drivers, vals, arg):
            ref = _sk_naive(n, d.reshape(n, n))
            gap = max(abs(v - ref), abs(f.value_of(d, a) - ref))
            worst = max(worst, gap)
            mismatches += gap > 1e-9
    return CriterionResult(
        4,
        "DP and Gray-code suprema vs brute force",
        mismatches == 0,
        f"{mismatches} mismatches, largest gap {worst:.2e}",
    )


# -- 5 -----------------------------------------------------------------------


def rescan_peak_set(field, sample: FieldSample, peaks, threshold: float, eps: float) -> list[str]:
    """Independent check of a peak set's invariants; returns the violated ones."""
    vals = field.values(sample.driver)[0]
    cov = field.covariance_matrix()
    A = np.asarray(peaks.indices, dtype=np.int64)
    bad = []
    if A.size and np.any(vals[A] < threshold):
        bad.append("threshold")
    if A.size > 1:
        sub = np.abs(cov[np.ix_(A, A)])
        np.fill_diagonal(sub, 0.0)
        if sub.max() > eps:
            bad.append("pairwise")
    rest = np.setdiff1d(np.flatnonzero(vals >= threshold), A)
    if rest.size:
        near = (np.abs(cov[np.ix_(rest, A)]) > eps).any(axis=1) if A.size else np.zeros(rest.size, bool)
        if not near.all():
            bad.append("maximality")
        if any(peaks.witness.get(int(i)) is None or abs(cov[i, peaks.witness[int(i)]]) <= eps for i in rest):
            bad.append("witness")
    return bad


def peak_certificate(profile: str, seed: int) -> CriterionResult:
    zoo = _zoo_enumerable()
    per_field = 1000 // len(zoo) + 1
    failures: dict[str, int] = {}
    block_over = 0
    total = 0
    for k, (name, field) in enumerate(zoo.items()):
        m = estimate_sup_stats(field, 2000, seed, tag=f"acc/peaks/pilot/{name}").m_hat
        q = PeakQuery(0.5, 0.3, m_ref=m, normalized=True)
        eps = q.eps_for(field)
        drivers = field.draw_drivers(make_rng(seed, stream_id("acc/peaks", k)), per_field)
        for d in drivers:
            s = FieldSample(field, d)
            p = extract_peaks(s, q)
            for b in rescan_peak_set(field, s, p, q.threshold(), eps):
                failures[b] = failures.get(b, 0) + 1
            if name.startswith("block") and len(p) > field.K:
                block_over += 1
            total += 1
    trials = _n(profile, 10**6, 200_000)
    sizes = peak_sizes(build_block(8, 16), PeakQuery(1.0, 0.5, m_ref=0.0), 0.0, trials, seed, "acc/peaks/event")
    p_hat = float(np.mean(sizes >= 8))
    p_ref = 0.5**8
    se = math.sqrt(p_ref * (1 - p_ref) / trials)
    ok = not failures and block_over == 0 and abs(p_hat - p_ref) <= 4 * se
    return CriterionResult(
        5,
        "peak-set certificates and block event",
        ok,
        f"{total} extractions, invariant failures {failures or 0}, block over K {block_over}; "
        f"P(all 8 blocks >= 0) = {p_hat:.5f} vs {p_ref:.5f} (4se = {4 * se:.5f})",
    )


# -- 6 -----------------------------------------------------------------------


def level_set_inequality(profile: str, seed: int) -> CriterionResult:
    trials = _n(profile, 10**5, 20_000)
    field = build_independent(256)
    rows = check_level_set_inequality(field, [0.3, 0.5, 0.7], [0.5, 1.0, 2.0], trials, seed)
    worst = max(r["frequency"] - r["bound"] for r in rows)
    return CriterionResult(
        6,
        "level-set inequality, N=256",
        all(r["pass"] for r in rows),
        f"max(freq - sigma^2/lambda^2) = {worst:.4f} over 9 (t, lambda) pairs",
        details={"rows": rows},
    )


# -- 7 -----------------------------------------------------------------------


def v0_oracle() -> float:
    """``|E[Y max(Y1, Y2)]|^2`` by 2-d quadrature, split along ``y1 = y2`` where ``max`` has its kink."""
    pdf = norm.pdf
    # y2 below y1: max = y1; y2 above y1: max = y2
    below = integrate.dblquad(lambda y2, y1: y1 * y1 * pdf(y1) * pdf(y2), -9, 9, -9, lambda y1: y1, epsabs=1e-12)[0]
    above = integrate.dblquad(lambda y2, y1: y1 * y2 * pdf(y1) * pdf(y2), -9, 9, lambda y1: y1, 9, epsabs=1e-12)[0]
    e1 = below + above
    return 2 * e1 * e1


def martingale_v0(profile: str, seed: int) -> CriterionResult:
    path = simulate_doob_path(orthonormal(2), grid=[0.0], inner_samples=10**5, seed=seed, stream=stream_id("acc/v0"))
    ref = v0_oracle()
    v = float(path.V_hat[0])
    return CriterionResult(
        7,
        "martingale V_0, two orthonormal rows",
        abs(v - 0.5) <= 0.02,
        f"V_0 = {v:.4f} +- {path.V_stderr[0]:.4f} (quadrature {ref:.6f})",
    )


# -- 8 -----------------------------------------------------------------------


def quadratic_variation_identity(profile: str, seed: int) -> CriterionResult:
    n_paths = _n(profile, 200, 100)
    inner = _n(profile, 10**5, 50_000)
    paths = simulate_doob_paths(orthonormal(2), n_paths, default_grid(64), inner, seed, tag="acc/qv")
    totals = np.array([sum(quadratic_variation(p)) for p in paths])
    ref = 1 - 1 / math.pi
    rel = abs(totals.mean() - ref) / ref
    zoo = {
        "orthonormal-2": orthonormal(2),
        "orthonormal-8": orthonormal(8),
        "block-2x4": as_explicit(build_block(2, 4)),
        "shifted-8": as_explicit(build_shifted(8, 1.0)),
        "polymer-2": as_explicit(build_directed_polymer(2)),
        "sk-3": as_explicit(build_sk(3)),
    }
    over = 0
    nodes = 0
    for k, (name, f) in enumerate(zoo.items()):
        for p in simulate_doob_paths(f, 3, default_grid(16), 20_000, seed, tag=f"acc/qv/zoo/{name}"):
            over += int(np.count_nonzero(p.V_hat > 1 + 3 * p.V_stderr))
            nodes += p.V_hat.size
    for p in paths:
        over += int(np.count_nonzero(p.V_hat > 1 + 3 * p.V_stderr))
        nodes += p.V_hat.size
    return CriterionResult(
        8,
        "quadratic-variation identity",
        rel <= 0.05 and over == 0,
        f"mean(qv + eta) = {totals.mean():.4f} vs {ref:.4f} ({100 * rel:.2f}% off, {n_paths} paths); "
        f"V above 1 + 3se at {over}/{nodes} nodes",
    )


# -- 9 -----------------------------------------------------------------------


def tail_exponent(profile: str, seed: int) -> CriterionResult:
    field = build_shifted(2**16, 1.0)
    trials = _n(profile, 10**6, 200_000)
    report = tail_experiment(field, [0.0, 0.1, 0.2, 0.3, 0.5])
    levels = report.m + report.betas * math.sqrt(math.log(field.size))
    rows = tail_agreement(field, levels, trials, seed, tag="acc/tail")
    exps = tail_experiment(field, [0.1, 0.2, 0.3])
    ok_mc = all(r["pass"] for r in rows)
    ok_exp = bool(np.all(exps.improves_borell))
    worst = max(abs(r["frequency"] - r["exact"]) / r["stderr"] for r in rows)
    return CriterionResult(
        9,
        "shifted-field tail, N=2^16",
        ok_mc and ok_exp,
        f"MC vs quadrature within {worst:.2f} se at 5 points; e(beta) = "
        + ", ".join(f"{e:.3f}" for e in exps.exponents)
        + " vs beta^2/2 = "
        + ", ".join(f"{b:.3f}" for b in exps.borell_exponents),
        details={"rows": rows},
    )


# -- 10 ----------------------------------------------------------------------


def l_oracle_two() -> tuple[float, float]:
    res = optimize.minimize_scalar(lambda t: -2 * norm.pdf(t) * norm.cdf(t), bounds=(0, 3), method="bounded", options={"xatol": 1e-10})
    return float(-res.fun), float(res.x)


def surface_area(profile: str, seed: int) -> CriterionResult:
    trials = _n(profile, 10**6, 200_000)
    p1 = estimate_surface_profile(orthonormal(1), trials, seed=seed, tag="acc/surface/1")
    p2 = estimate_surface_profile(orthonormal(2), trials, seed=seed, tag="acc/surface/2")
    L_ref, _ = l_oracle_two()
    ok_1 = abs(p1.L_hat - norm.pdf(0)) <= 0.01
    ok_2 = abs(p2.L_hat - L_ref) / L_ref <= 0.03
    mass = [abs(p.total_mass() - 1) for p in (p1, p2)]
    zoo = {
        "orthonormal-2": (orthonormal(2), p2),
        "block-2x4": (build_block(2, 4), None),
        "independent-256": (build_independent(256), None),
        "shifted-256": (build_shifted(256, 1.0), None),
        "polymer-4": (build_directed_polymer(4, "unit"), None),
        "sk-8": (build_sk(8, "unit"), None),
    }
    zoo_trials = _n(profile, 10**5, 30_000)
    coarea = {}
    for name, (f, prof) in zoo.items():
        if prof is None:
            prof = estimate_surface_profile(f, zoo_trials, seed=seed, tag=f"acc/surface/{name}")
            mass.append(abs(prof.total_mass() - 1))
        coarea[name] = check_var_exp(f, zoo_trials, seed, profile=prof)["coarea_pass"]
    ok_mass = max(mass) <= 1e-9
    ok = ok_1 and ok_2 and ok_mass and all(coarea.values())
    return CriterionResult(
        10,
        "Gaussian surface-area profile",
        ok,
        f"L(N=1) = {p1.L_hat:.4f}, L(N=2) = {p2.L_hat:.4f} vs {L_ref:.4f}, "
        f"max |mass - 1| = {max(mass):.1e}, co-area holds on {sum(coarea.values())}/{len(coarea)} fields",
        details={"coarea": coarea},
    )


# -- 11 ----------------------------------------------------------------------


def corollary_shape(profile: str, seed: int) -> CriterionResult:
    trials = _n(profile, 10**5, 30_000)
    cs = {}
    for N in (2**4, 2**8, 2**12):
        st = estimate_sup_stats(build_independent(N), trials, seed, tag=f"acc/corollary/{N}")
        cs[N] = st.var_hat * math.log(N)
    vals = np.array(list(cs.values()))
    centre = vals.mean()
    ok = bool(np.all(vals > 0) and np.all(np.abs(vals - centre) <= 0.2 * centre))
    return CriterionResult(
        11,
        "Var M log N stability",
        ok,
        ", ".join(f"N={N}: c={c:.3f}" for N, c in cs.items()) + f" (spread {np.ptp(vals) / centre:.1%} of mean)",
    )


# -- 12 ----------------------------------------------------------------------


DETERMINISM_CONFIGS = [
    {"experiment": "sup-stats", "name": "det-sup", "trials": 20_000, "field": {"kind": "block", "K": 2, "N": 4}},
    {
        "experiment": "peaks",
        "name": "det-peaks",
        "trials": 20_000,
        "field": {"kind": "block", "K": 8, "N": 16},
        "params": {"delta": 1.0, "eps": 0.5, "ell": 8, "pilot_trials": 2000},
    },
    {
        "experiment": "fe-curve",
        "name": "det-fe",
        "trials": 20_000,
        "field": {"kind": "sk", "n": 6},
        "params": {"betas": [0.5, 1.0, 4.0]},
    },
    {
        "experiment": "martingale",
        "name": "det-martingale",
        "trials": 4,
        "field": {"kind": "orthonormal", "N": 2},
        "params": {"inner_samples": 5000, "nodes": 8},
    },
    {
        "experiment": "tail",
        "name": "det-tail",
        "trials": 20_000,
        "field": {"kind": "shifted", "N": 1024, "alpha": 1.0},
        "params": {"betas": [0.1, 0.3], "exact": False},
    },
    {"experiment": "surface", "name": "det-surface", "trials": 20_000, "field": {"kind": "orthonormal", "N": 2}},
]


def _values(record) -> np.ndarray:
    return np.array([r["value"] for r in record.estimates], dtype=float)


def determinism(profile: str, seed: int) -> CriterionResult:
    identical = True
    worst = 0.0
    for doc in DETERMINISM_CONFIGS:
        cfg = config_from_dict({**doc, "seed": seed})
        with tempfile.TemporaryDirectory() as tmp:
            a = run(cfg, Path(tmp) / "a")
            b = run(cfg, Path(tmp) / "b")
            for suffix in ("json", "csv"):
                if (Path(tmp) / "a" / f"{cfg.label()}.{suffix}").read_bytes() != (
                    Path(tmp) / "b" / f"{cfg.label()}.{suffix}"
                ).read_bytes():
                    identical = False
        c = run(cfg.with_overrides(workers=2))
        va, vc = _values(a), _values(c)
        scale = np.maximum(np.abs(va), 1e-300)
        drift = np.nanmax(np.where(np.isnan(va) & np.isnan(vc), 0.0, np.abs(va - vc) / scale))
        worst = max(worst, float(drift))
    return CriterionResult(
        12,
        "determinism",
        identical and worst <= 1e-9,
        f"byte-identical reruns: {identical}; max relative drift across worker counts {worst:.1e}",
    )


CRITERIA = [
    closed_form_moments,
    borell_tail,
    free_energy_sandwich,
    dp_equivalence,
    peak_certificate,
    level_set_inequality,
    martingale_v0,
    quadratic_variation_identity,
    tail_exponent,
    surface_area,
    corollary_shape,
    determinism,
]


def run_criterion(k: int, profile: str = "full", seed: int = 20240601) -> CriterionResult:
    start = time.perf_counter()
    res = CRITERIA[k - 1](profile, seed)
    res.seconds = time.perf_counter() - start
    return res


def verify_all(profile: str = "quick", seed: int = 20240601, out: str | Path | None = None, echo=print) -> list[CriterionResult]:
    """Run every criterion, print one line each, optionally save a JSON summary."""
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}")
    results = []
    for k in range(1, len(CRITERIA) + 1):
        res = run_criterion(k, profile, seed)
        if echo is not None:
            echo(res.line())
        results.append(res)
    if out is not None:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        summary = [
            {"criterion": r.number, "title": r.title, "passed": r.passed, "summary": r.summary, "details": r.details}
            for r in results
        ]
        text = json.dumps(_plain(summary), indent=2, ensure_ascii=False)
        (path / f"verify-{profile}.json").write_text(text + "\n", encoding="utf-8")
    return results

