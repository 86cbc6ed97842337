"""Streaming moments, bootstrap intervals and binomial helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_RESAMPLES = 1000
CONFIDENCE = 0.95


@dataclass(frozen=True)
class Moments:
    """Count, mean and centred second moment of a stream of reals.

    Chunks are reduced with a two-pass formula and combined with the
    pairwise update of Chan, Golub and LeVeque, which keeps the merge
    associative up to rounding.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def from_array(cls, x) -> "Moments":
        x = np.asarray(x, dtype=float).ravel()
        n = x.size
        if n == 0:
            return cls()
        mean = float(x.mean())
        d = x - mean
        # one correction step absorbs the rounding error of the first pass
        corr = float(d.mean())
        mean += corr
        m2 = float(np.dot(d, d)) - n * corr * corr
        return cls(n, mean, max(m2, 0.0))

    def merge(self, other: "Moments") -> "Moments":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return Moments(n, mean, m2)

    def push(self, value: float) -> "Moments":
        """Welford single-observation update."""
        n = self.count + 1
        delta = value - self.mean
        mean = self.mean + delta / n
        return Moments(n, mean, self.m2 + delta * (value - mean))

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 1 else math.inf

    @property
    def variance_stderr(self) -> float:
        """Normal-theory standard error of the sample variance."""
        if self.count < 2:
            return math.inf
        return self.variance * math.sqrt(2.0 / (self.count - 1))


def merge_all(parts) -> Moments:
    total = Moments()
    for part in parts:
        total = total.merge(part)
    return total


def blocked_moments(x, block: int = 65536) -> Moments:
    x = np.asarray(x, dtype=float).ravel()
    return merge_all(Moments.from_array(x[i:i + block]) for i in range(0, x.size, block))


def _percentile_interval(draws: np.ndarray, confidence: float) -> tuple[float, float]:
    tail = 50.0 * (1.0 - confidence)
    lo, hi = np.percentile(draws, [tail, 100.0 - tail])
    return float(lo), float(hi)


def bootstrap_mean_var(
    x,
    rng: np.random.Generator,
    n_resamples: int = N_RESAMPLES,
    confidence: float = CONFIDENCE,
    max_groups: int = 2048,
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Percentile-bootstrap intervals for the mean and the variance of ``x``.

    Up to ``max_groups`` observations this is the ordinary bootstrap. Beyond
    that, contiguous groups of i.i.d. trials are the resampling unit, which
    keeps the cost at ``n_resamples * max_groups`` regardless of sample size.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("bootstrap needs at least two observations")
    center = float(x.mean())
    d = x - center
    n_groups = min(n, max_groups)
    starts = np.linspace(0, n, n_groups + 1).astype(np.int64)[:-1]
    s1 = np.add.reduceat(d, starts)
    s2 = np.add.reduceat(d * d, starts)
    cnt = np.diff(np.append(starts, n)).astype(float)
    weights = rng.multinomial(n_groups, np.full(n_groups, 1.0 / n_groups), size=n_resamples).astype(float)
    nb = weights @ cnt
    t1 = weights @ s1
    t2 = weights @ s2
    means = center + t1 / nb
    variances = np.maximum(t2 - t1 * t1 / nb, 0.0) / np.maximum(nb - 1.0, 1.0)
    return _percentile_interval(means, confidence), _percentile_interval(variances, confidence)


def bootstrap_proportion(
    successes: int,
    trials: int,
    rng: np.random.Generator,
    n_resamples: int = N_RESAMPLES,
    confidence: float = CONFIDENCE,
) -> tuple[float, float]:
    """Percentile bootstrap of a Bernoulli mean (resampled counts are binomial)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = successes / trials
    draws = rng.binomial(trials, p, size=n_resamples) / trials
    return _percentile_interval(draws, confidence)


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def soft_max(x, beta: float, axis: int = -1, where=None) -> np.ndarray:
    """``beta^{-1} log sum exp(beta x)`` as ``max + beta^{-1} log(sum >= 1)``.

    Adding a non-negative correction to the maximum keeps ``result >= max``
    exact in floating point, which ``(log sum exp(beta x)) / beta`` does not.
    ``where`` restricts the sum to a mask; the shift is taken over the whole
    row, so a subset can only lower the result. An empty selection gives
    ``-inf``.
    """
    x = np.asarray(x, dtype=float)
    shift = np.max(x, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    terms = np.exp(beta * (x - shift))
    if where is not None:
        terms = np.where(where, terms, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(shift, axis=axis) + np.log(np.sum(terms, axis=axis)) / beta
