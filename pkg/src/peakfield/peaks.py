"""Greedy near-orthogonal peak extraction and multiple-peak event estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._rng import make_rng, stream_id
from .estimators import greedy_peak_counts
from .extremes import SupremumStats, couple_drivers, estimate_sup_stats
from .fields import LEVEL_SET_CAP, FieldSample, GaussianField
from .parallel import map_chunks
from .stats import binomial_stderr, bootstrap_proportion

BATCH_LIMIT = 64
_CHUNK = 1024


@dataclass(frozen=True)
class PeakQuery:
    """Depth ``delta`` relative to ``m_ref``, covariance threshold ``eps``, slack ``zeta``.

    With ``normalized=True`` the threshold is ``eps * max variance``.
    """

    delta: float
    eps: float
    m_ref: float | None = None
    zeta: float = 1.0
    normalized: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in (0, 1], got {self.zeta}")

    def threshold(self, m_ref: float | None = None) -> float:
        m = self.m_ref if m_ref is None else m_ref
        if m is None:
            raise ValueError("a reference mean is required; set m_ref or estimate it first")
        return (1.0 - self.delta) * m

    def eps_for(self, field: GaussianField) -> float:
        return self.eps * field.max_variance if self.normalized else self.eps


@dataclass
class PeakSet:
    indices: np.ndarray
    values: np.ndarray
    threshold: float
    eps: float
    max_abs_cov: float
    witness: dict[int, int] = dc_field(repr=False)
    level_set_size: int = 0

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass
class PeakEventStats:
    trials: int
    successes: int
    ell: int
    m_ref: float
    frequency: float
    ci: tuple[float, float]
    stderr: float
    mean_size: float
    size_quantile: float
    bound_exponent: float
    c1_fit: float
    c2_fit: float
    sizes: np.ndarray = dc_field(repr=False)
    beta: float | None = None

    def summary(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "sizes"}
        out["ci"] = list(self.ci)
        return out


def greedy_maximal(field: GaussianField, order, eps: float) -> tuple[np.ndarray, dict[int, int]]:
    """Greedy maximal subset of ``order`` with pairwise ``|R| <= eps``.

    Candidates are admitted in the given order. Every rejected candidate is
    mapped to the admitted index with the largest ``|R|`` (lowest index on
    ties), which is the blocking witness.
    """
    order = np.asarray(order, dtype=np.int64)
    admitted = np.empty(0, dtype=np.int64)
    for start in range(0, order.size, _CHUNK):
        chunk = order[start:start + _CHUNK]
        if admitted.size:
            pre = (np.abs(field.covariance_block(chunk, admitted)) > eps).any(axis=1)
        else:
            pre = np.zeros(chunk.size, dtype=bool)
        inner = np.abs(field.covariance_block(chunk, chunk)) > eps
        local: list[int] = []
        for a in range(chunk.size):
            if pre[a] or inner[a, local].any():
                continue
            local.append(a)
        admitted = np.concatenate([admitted, chunk[local]])

    witness: dict[int, int] = {}
    rejected = np.setdiff1d(order, admitted)
    ranked = np.sort(admitted)
    for start in range(0, rejected.size, _CHUNK):
        chunk = rejected[start:start + _CHUNK]
        cov = np.abs(field.covariance_block(chunk, ranked))
        for i, j in zip(chunk, np.argmax(cov, axis=1)):
            witness[int(i)] = int(ranked[j])
    return admitted, witness


def _values_of(sample: FieldSample, idx: np.ndarray) -> np.ndarray:
    field = sample.field
    if field.enumerable:
        return sample.values()[idx]
    return field.values_at(np.broadcast_to(sample.driver, (idx.size, sample.driver.size)), idx)


def extract_peaks(sample: FieldSample, query: PeakQuery, m_ref: float | None = None, cap: int = LEVEL_SET_CAP) -> PeakSet:
    """Maximal near-orthogonal subset of the level set ``{X_i >= (1 - delta) m_ref}``.

    The level set is scanned in descending value order, lowest index first on
    ties, so the output is a deterministic function of the sample.
    """
    field = sample.field
    threshold = query.threshold(m_ref)
    eps = query.eps_for(field)
    level = sample.level_set(threshold, cap)
    vals = _values_of(sample, level)
    order = level[np.argsort(-vals, kind="stable")]
    admitted, witness = greedy_maximal(field, order, eps)
    pos = {int(i): k for k, i in enumerate(level)}
    admitted_vals = vals[[pos[int(i)] for i in admitted]] if admitted.size else np.empty(0)
    if admitted.size > 1:
        cov = np.abs(field.covariance_block(admitted, admitted))
        np.fill_diagonal(cov, 0.0)
        max_abs = float(cov.max())
    else:
        max_abs = 0.0
    return PeakSet(admitted, admitted_vals, threshold, eps, max_abs, witness, int(level.size))


def _pilot(field: GaussianField, seed: int, tag: str, trials: int) -> SupremumStats:
    return estimate_sup_stats(field, trials, seed, tag=tag)


def peak_sizes(field: GaussianField, query: PeakQuery, m_ref: float, trials: int, seed: int, tag: str) -> np.ndarray:
    """``|A|`` for ``trials`` independent samples."""
    threshold = query.threshold(m_ref)
    eps = query.eps_for(field)
    if field.enumerable and field.size <= BATCH_LIMIT:
        cov = field.covariance_matrix()

        def kernel(rng, size):
            return greedy_peak_counts(field.values(field.draw_drivers(rng, size)), cov, threshold, eps)

    else:

        def kernel(rng, size):
            drivers = field.draw_drivers(rng, size)
            return np.array([len(extract_peaks(FieldSample(field, d), query, m_ref)) for d in drivers])

    return np.concatenate(map_chunks(kernel, trials, seed, tag))


def _event_stats(sizes, ell, m_ref, field, query, sd_sup, seed, tag, beta=None, sigma_tilde=None) -> PeakEventStats:
    trials = sizes.size
    successes = int(np.count_nonzero(sizes >= ell))
    p = successes / trials
    ci = bootstrap_proportion(successes, trials, make_rng(seed, stream_id(tag + "/bootstrap")))
    eps = query.eps_for(field)
    spread = sd_sup if sigma_tilde is None else sigma_tilde
    # exponent of the cardinality bound, without its universal constant
    base = eps**2 * query.delta * query.zeta / (field.max_variance * spread**2) if spread > 0 else math.inf
    q = float(np.quantile(sizes, query.zeta)) if query.zeta < 1 else float(sizes.min())
    c2 = math.log(max(q, 1.0)) / base if 0 < base < math.inf else math.nan
    depth = query.delta * m_ref
    c1 = max(0.0, 1.0 - p - query.zeta) * depth**2 / sd_sup**2 if sd_sup > 0 else math.nan
    return PeakEventStats(
        trials=trials,
        successes=successes,
        ell=int(ell),
        m_ref=float(m_ref),
        frequency=p,
        ci=ci,
        stderr=binomial_stderr(p, trials),
        mean_size=float(sizes.mean()),
        size_quantile=q,
        bound_exponent=base,
        c1_fit=c1,
        c2_fit=c2,
        sizes=sizes,
        beta=beta,
    )


def estimate_peak_event(
    field: GaussianField,
    query: PeakQuery,
    ell: int,
    trials: int,
    seed: int,
    pilot_trials: int = 10_000,
) -> PeakEventStats:
    """Frequency of ``{|extract_peaks| >= ell}`` with a bootstrap interval.

    Unless the query pins ``m_ref``, the reference mean comes from a pilot
    run on its own stream. The fitted constants are the values that make the
    cardinality bound and the failure-probability bound tight on this run.
    """
    if int(ell) < 1:
        raise ValueError("ell must be >= 1")
    pilot = _pilot(field, seed, "peaks/pilot", pilot_trials)
    m_ref = pilot.m_hat if query.m_ref is None else query.m_ref
    sizes = peak_sizes(field, query, m_ref, trials, seed, "peaks")
    return _event_stats(sizes, ell, m_ref, field, query, pilot.sd_hat, seed, "peaks")


def shortest_interval(suprema, coverage: float = 0.75) -> tuple[float, float]:
    """Shortest empirical interval holding strictly more than ``coverage`` of the sample."""
    x = np.sort(np.asarray(suprema, dtype=float))
    k = int(math.floor(coverage * x.size)) + 1
    if k > x.size:
        raise ValueError("sample too small for the requested coverage")
    widths = x[k - 1:] - x[: x.size - k + 1]
    j = int(np.argmin(widths))
    return float(x[j]), float(x[j + k - 1])


def check_lemma22_bound(field: GaussianField, suprema, eps: float, interval: tuple[float, float] | None = None) -> dict:
    """Compare a maximal ``eps``-near-orthogonal set of the whole index set with ``exp(eps^2 / (32 (s-r)^2))``.

    Applies when the empirical ``P(M not in [r, s]) < 1/4`` and ``s - r <= eps/8``;
    otherwise the report says ``not applicable``.
    """
    suprema = np.asarray(suprema, dtype=float)
    r, s = interval if interval is not None else shortest_interval(suprema)
    outside = float(np.mean((suprema < r) | (suprema > s)))
    report = {"r": r, "s": s, "width": s - r, "eps": eps, "outside_frequency": outside}
    if not outside < 0.25 or not s - r <= eps / 8:
        report["status"] = "not applicable"
        return report
    admitted, _ = greedy_maximal(field, np.arange(field.size), eps)
    # compare on the log scale; the bound overflows for narrow intervals
    log_bound = eps**2 / (32 * (s - r) ** 2) if s > r else math.inf
    bound = math.exp(log_bound) if log_bound < 700 else math.inf
    ok = math.log(admitted.size) >= log_bound
    report.update(size=int(admitted.size), bound=bound, log_bound=log_bound, status="pass" if ok else "fail")
    return report


def check_corollary25(field: GaussianField, delta: float, trials: int, seed: int, pilot_trials: int = 10_000) -> dict:
    """Frequency of ``X'_{i(X)} >= (1 - delta) m`` under ``X = a X' + sqrt(1-a^2) X''``, ``a = 1 - delta/4``."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    alpha = 1.0 - delta / 4.0
    pilot = _pilot(field, seed, "cor25/pilot", pilot_trials)
    threshold = (1.0 - delta) * pilot.m_hat

    def kernel(rng, size):
        x, x1, _ = couple_drivers(field, alpha, rng, size)
        _, arg = field.supremum(x)
        return int(np.count_nonzero(field.values_at(x1, arg) >= threshold))

    hits = sum(map_chunks(kernel, trials, seed, "cor25"))
    p = hits / trials
    ci = bootstrap_proportion(hits, trials, make_rng(seed, stream_id("cor25/bootstrap")))
    ratio = pilot.var_hat / (pilot.m_hat**2 * delta**2) if pilot.m_hat != 0 else math.inf
    return {
        "delta": delta,
        "alpha": alpha,
        "m_hat": pilot.m_hat,
        "var_hat": pilot.var_hat,
        "frequency": p,
        "ci": list(ci),
        "stderr": binomial_stderr(p, trials),
        "variance_ratio": ratio,
        "c_fit": (1.0 - p) / ratio if ratio not in (0.0, math.inf) else math.nan,
    }
