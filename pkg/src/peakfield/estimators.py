"""scikit-learn compatible estimators over realised field values.

Rows of ``X`` are independent realisations, columns are field indices. The
estimators compose with ``Pipeline`` and ``clone`` like any other
transformer; the Monte Carlo drivers in :mod:`peakfield.extremes`,
:mod:`peakfield.free_energy` and :mod:`peakfield.geometry` fit them on
suprema or value matrices they simulate.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .stats import (
    CONFIDENCE,
    N_RESAMPLES,
    blocked_moments,
    bootstrap_mean_var,
    soft_max,
)


def _as_rng(random_state) -> np.random.Generator:
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def _suprema(X) -> tuple[np.ndarray, np.ndarray | None]:
    X = check_array(X, ensure_2d=False, ensure_min_samples=2)
    if X.ndim == 1:
        return X, None
    arg = np.argmax(X, axis=1)
    return X[np.arange(X.shape[0]), arg], arg


class SupremumEstimator(TransformerMixin, BaseEstimator):
    """Mean and variance of the supremum with percentile-bootstrap intervals.

    ``fit`` accepts either a value matrix (the row maximum is taken) or a 1-d
    array of already computed suprema. ``transform`` maps a value matrix to
    its column of row maxima.
    """

    def __init__(self, n_resamples=N_RESAMPLES, confidence=CONFIDENCE, random_state=None):
        self.n_resamples = n_resamples
        self.confidence = confidence
        self.random_state = random_state

    def fit(self, X, y=None):
        sup, arg = _suprema(X)
        moments = blocked_moments(sup)
        self.moments_ = moments
        self.n_trials_ = moments.count
        self.mean_ = moments.mean
        self.var_ = moments.variance
        self.mean_ci_, self.var_ci_ = bootstrap_mean_var(
            sup, _as_rng(self.random_state), self.n_resamples, self.confidence
        )
        self.suprema_ = sup
        self.argmax_ = arg
        return self

    def transform(self, X):
        X = check_array(X)
        return X.max(axis=1, keepdims=True)


class FreeEnergyEstimator(TransformerMixin, BaseEstimator):
    """Free energy ``F_beta = beta^{-1} log sum_i exp(beta X_i)`` for a grid of ``beta``.

    ``transform`` returns one column per inverse temperature; ``fit`` stores
    per-temperature means, variances and bootstrap intervals. All
    temperatures are evaluated on the same rows (common random numbers).
    """

    def __init__(self, betas=(1.0,), n_resamples=N_RESAMPLES, confidence=CONFIDENCE, random_state=None):
        self.betas = betas
        self.n_resamples = n_resamples
        self.confidence = confidence
        self.random_state = random_state

    def _betas(self) -> np.ndarray:
        betas = np.atleast_1d(np.asarray(self.betas, dtype=float))
        if betas.size == 0 or np.any(betas <= 0) or not np.all(np.isfinite(betas)):
            raise ValueError("inverse temperatures must be positive and finite")
        return betas

    def transform(self, X):
        X = check_array(X)
        betas = self._betas()
        return np.column_stack([soft_max(X, b, axis=1) for b in betas])

    def fit(self, X, y=None):
        F = self.transform(X)
        if F.shape[0] < 2:
            raise ValueError("need at least two realisations")
        rng = _as_rng(self.random_state)
        self.betas_ = self._betas()
        self.n_trials_ = F.shape[0]
        self.mean_ = np.empty(F.shape[1])
        self.var_ = np.empty(F.shape[1])
        self.mean_ci_ = np.empty((F.shape[1], 2))
        self.var_ci_ = np.empty((F.shape[1], 2))
        for k in range(F.shape[1]):
            m = blocked_moments(F[:, k])
            self.mean_[k], self.var_[k] = m.mean, m.variance
            self.mean_ci_[k], self.var_ci_[k] = bootstrap_mean_var(F[:, k], rng, self.n_resamples, self.confidence)
        self.free_energies_ = F
        return self


def greedy_peak_counts(values, covariance, threshold, eps, return_mask=False):
    """Greedy near-orthogonal peak extraction for a batch of value rows.

    Candidates are the indices with value ``>= threshold`` visited in
    descending value order (lowest index first among ties); a candidate is
    admitted iff ``|R(candidate, a)| <= eps`` for every admitted ``a``.
    Returns the admitted counts and optionally the admission mask.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    blocked_by = np.abs(np.asarray(covariance, dtype=float)) > eps
    b, n = values.shape
    order = np.argsort(-values, axis=1, kind="stable")
    rows = np.arange(b)
    admitted = np.zeros((b, n), dtype=bool)
    for k in range(n):
        cand = order[:, k]
        eligible = values[rows, cand] >= threshold
        if not eligible.any():
            break
        clash = (admitted & blocked_by[cand]).any(axis=1)
        admitted[rows, cand] = eligible & ~clash
    counts = admitted.sum(axis=1)
    return (counts, admitted) if return_mask else counts


class PeakCounter(TransformerMixin, BaseEstimator):
    """Number of greedy near-orthogonal peaks per realisation.

    ``fit`` pins the reference mean to the average row maximum unless
    ``m_ref`` is given; ``transform`` returns one count per row. Suited to
    fields whose full covariance matrix fits in memory.
    """

    def __init__(self, covariance=None, delta=0.5, eps=0.5, m_ref=None, normalized=False):
        self.covariance = covariance
        self.delta = delta
        self.eps = eps
        self.m_ref = m_ref
        self.normalized = normalized

    def fit(self, X, y=None):
        X = check_array(X)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (X.shape[1], X.shape[1]):
            raise ValueError("covariance shape does not match the number of columns")
        if not 0 < self.delta <= 1 or self.eps <= 0:
            raise ValueError("need 0 < delta <= 1 and eps > 0")
        self.m_ref_ = float(X.max(axis=1).mean()) if self.m_ref is None else float(self.m_ref)
        self.threshold_ = (1.0 - self.delta) * self.m_ref_
        self.eps_ = self.eps * (np.diag(cov).max() if self.normalized else 1.0)
        return self

    def transform(self, X):
        check_is_fitted(self, "m_ref_")
        X = check_array(X)
        return greedy_peak_counts(X, self.covariance, self.threshold_, self.eps_)[:, None]


class SurfaceProfileEstimator(BaseEstimator):
    """Histogram density of ``u = max_i <v_i, Gamma>`` on ``t >= 0``.

    By the co-area identity with ``|grad u| = 1`` this density is the
    Gaussian surface area ``gamma+(K_t)``. ``bins`` is an array of edges
    starting at 0, or ``"fd"`` for a Freedman-Diaconis width over
    ``[0, t_max]``. Mass below 0 and above the last edge is kept separately.
    """

    def __init__(self, bins="fd", t_max=None, n_resamples=N_RESAMPLES, confidence=CONFIDENCE, random_state=None):
        self.bins = bins
        self.t_max = t_max
        self.n_resamples = n_resamples
        self.confidence = confidence
        self.random_state = random_state

    def _edges(self, u: np.ndarray) -> np.ndarray:
        if not isinstance(self.bins, str):
            edges = np.asarray(self.bins, dtype=float)
            if edges.ndim != 1 or edges.size < 2 or edges[0] != 0.0 or np.any(np.diff(edges) <= 0):
                raise ValueError("bin edges must start at 0 and increase strictly")
            return edges
        if self.bins != "fd":
            raise ValueError(f"unknown bin rule {self.bins!r}")
        q75, q25 = np.percentile(u, [75, 25])
        width = 2.0 * (q75 - q25) * u.size ** (-1.0 / 3.0)
        t_max = self.t_max if self.t_max is not None else max(2.0 * u.mean() + 4.0, float(u.max()))
        n_bins = max(1, int(np.ceil(t_max / width)))
        return np.linspace(0.0, n_bins * width, n_bins + 1)

    def fit(self, X, y=None):
        u, _ = _suprema(X)
        edges = self._edges(u)
        counts, _ = np.histogram(u, bins=edges)
        # np.histogram closes the last bin on the right; keep the convention [a, b)
        top = np.count_nonzero(u == edges[-1])
        counts[-1] -= top
        n = u.size
        negative = int(np.count_nonzero(u < 0.0))
        overflow = n - negative - int(counts.sum())
        width = np.diff(edges)
        self.edges_ = edges
        self.counts_ = counts
        self.n_trials_ = n
        self.density_ = counts / (n * width)
        self.negative_mass_ = negative / n
        self.overflow_mass_ = overflow / n
        self.cdf_ = (negative + np.cumsum(counts)) / n

        rng = _as_rng(self.random_state)
        probs = np.concatenate([[negative], counts, [overflow]]) / n
        draws = rng.multinomial(n, probs, size=self.n_resamples)[:, 1:-1] / (n * width)
        self.density_ci_ = np.percentile(
            draws, [50 * (1 - self.confidence), 100 - 50 * (1 - self.confidence)], axis=0
        ).T
        best = int(np.argmax(self.density_))
        self.L_ = float(self.density_[best])
        self.L_bin_ = best
        tail = 50 * (1 - self.confidence)
        lo, hi = np.percentile(draws.max(axis=1), [tail, 100 - tail])
        self.L_ci_ = (float(lo), float(hi))
        return self

    @property
    def centers_(self) -> np.ndarray:
        check_is_fitted(self, "edges_")
        return 0.5 * (self.edges_[1:] + self.edges_[:-1])

    def total_mass(self) -> float:
        check_is_fitted(self, "edges_")
        return float(self.density_ @ np.diff(self.edges_) + self.negative_mass_ + self.overflow_mass_)
