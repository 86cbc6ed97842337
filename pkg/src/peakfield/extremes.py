"""Suprema, free energies, level sets and the Gaussian coupling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import erfc

from ._rng import derive_stream, make_rng, stream_id
from .estimators import SupremumEstimator
from .fields import LEVEL_SET_CAP, FieldSample, GaussianField, NotEnumerableError
from .parallel import map_chunks
from .stats import binomial_stderr, soft_max


@dataclass
class SupremumStats:
    m_hat: float
    var_hat: float
    trials: int
    m_ci: tuple[float, float]
    var_ci: tuple[float, float]
    m_stderr: float
    var_stderr: float
    suprema: np.ndarray = dc_field(repr=False)
    argmax: np.ndarray = dc_field(repr=False)

    @property
    def sd_hat(self) -> float:
        return math.sqrt(self.var_hat)

    def summary(self) -> dict:
        return {
            "m_hat": self.m_hat,
            "var_hat": self.var_hat,
            "trials": self.trials,
            "m_ci": list(self.m_ci),
            "var_ci": list(self.var_ci),
            "m_stderr": self.m_stderr,
            "var_stderr": self.var_stderr,
        }


@dataclass
class FreeEnergyStats:
    beta: float
    f_hat: float
    var_hat: float
    trials: int
    f_ci: tuple[float, float]
    var_ci: tuple[float, float]


@dataclass
class CoupledTriple:
    """``x = t x' + sqrt(1 - t^2) x''`` at driver level."""

    t: float
    x: FieldSample
    x_prime: FieldSample
    x_dprime: FieldSample


def supremum(sample: FieldSample) -> tuple[float, int]:
    return sample.supremum()


def free_energy(sample: FieldSample | np.ndarray, beta: float) -> float:
    """``beta^{-1} log sum_i exp(beta X_i)`` by a max-shifted log-sum-exp.

    Fields too large to enumerate are refused rather than approximated.
    """
    if not beta > 0 or not math.isfinite(beta):
        raise ValueError(f"beta must be positive and finite, got {beta}")
    values = sample.values() if isinstance(sample, FieldSample) else np.asarray(sample, dtype=float)
    return float(soft_max(values, beta))


def level_set(sample: FieldSample, threshold: float, cap: int = LEVEL_SET_CAP) -> np.ndarray:
    return sample.level_set(threshold, cap)


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 < t < 1.0:
        raise ValueError(f"coupling parameter must lie in (0, 1), got {t}")
    return t


def couple_drivers(field: GaussianField, t: float, rng: np.random.Generator, size: int):
    """Batch version of :func:`couple_decompose`: returns ``(x, x', x'')`` drivers."""
    t = _check_t(t)
    d1 = field.draw_drivers(rng, size)
    d2 = field.draw_drivers(rng, size)
    return t * d1 + math.sqrt(1.0 - t * t) * d2, d1, d2


def couple_decompose(field: GaussianField, t: float, seed: int, stream: int = 0) -> CoupledTriple:
    """Independent copies ``x'`` and ``x''`` mixed into a third copy ``x``.

    The field is linear in its driver, so mixing drivers gives
    ``x - mu = t (x' - mu) + sqrt(1-t^2) (x'' - mu)`` value-wise, and ``x``
    has the law of the field. ``x'`` and ``x''`` use disjoint child streams.
    """
    t = _check_t(t)
    s1, s2 = derive_stream(stream, "couple-prime"), derive_stream(stream, "couple-dprime")
    d1 = field.draw_drivers(make_rng(seed, s1), 1)[0]
    d2 = field.draw_drivers(make_rng(seed, s2), 1)[0]
    x1 = FieldSample(field, d1, seed, s1)
    x2 = FieldSample(field, d2, seed, s2)
    x = FieldSample(field, t * d1 + math.sqrt(1.0 - t * t) * d2, seed, stream)
    return CoupledTriple(t, x, x1, x2)


def _sup_kernel(field):
    def kernel(rng, size):
        return field.supremum(field.draw_drivers(rng, size))

    return kernel


def simulate_suprema(field: GaussianField, trials: int, seed: int, tag: str = "sup") -> tuple[np.ndarray, np.ndarray]:
    parts = map_chunks(_sup_kernel(field), trials, seed, tag)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def estimate_sup_stats(field: GaussianField, trials: int, seed: int, tag: str = "sup") -> SupremumStats:
    """Monte Carlo mean and variance of ``M(X)`` with bootstrap intervals."""
    if int(trials) < 2:
        raise ValueError("need at least two trials")
    sup, arg = simulate_suprema(field, trials, seed, tag)
    est = SupremumEstimator(random_state=make_rng(seed, stream_id(tag + "/bootstrap"))).fit(sup)
    return SupremumStats(
        m_hat=est.mean_,
        var_hat=est.var_,
        trials=est.n_trials_,
        m_ci=est.mean_ci_,
        var_ci=est.var_ci_,
        m_stderr=est.moments_.stderr,
        var_stderr=est.moments_.variance_stderr,
        suprema=sup,
        argmax=arg,
    )


def borell_tail_bound(sigma: float, z: float) -> float:
    """``2/(sqrt(2 pi) sigma) int_z^inf exp(-y^2/(2 sigma^2)) dy = erfc(z / (sigma sqrt 2))``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if z < 0:
        raise ValueError("z must be non-negative")
    return float(erfc(z / (sigma * math.sqrt(2.0))))


def expected_sup_upper_bound(field: GaussianField) -> float:
    """``sqrt(2 log N) * max_i sd(X_i)``."""
    return math.sqrt(2.0 * math.log(field.size)) * math.sqrt(field.max_variance)


def borell_envelope(stats: SupremumStats, sigma: float, z_grid) -> list[dict]:
    """Empirical ``P(|M - m| >= z)`` beside the Borell-TIS bound on a grid of ``z``."""
    dev = np.abs(stats.suprema - stats.m_hat)
    rows = []
    for z in z_grid:
        p = float(np.mean(dev >= z))
        bound = borell_tail_bound(sigma, z)
        se = binomial_stderr(p, stats.trials)
        rows.append({"z": float(z), "frequency": p, "bound": bound, "stderr": se, "pass": p <= bound + 4 * se})
    return rows


def check_level_set_inequality(
    field: GaussianField,
    ts,
    lambda_multiples,
    trials: int,
    seed: int,
    pilot: SupremumStats | None = None,
) -> list[dict]:
    """Frequency of ``M(X'_{U_t}) >= sqrt(1-t^2) m + lambda/sqrt(1-t^2)`` against ``sigma^2/lambda^2``.

    ``U_t = {i : X_i >= t m}`` comes from one copy and the maximum is taken
    over an independent copy ``X'``; ``lambda`` is given in multiples of the
    estimated standard deviation of the supremum.
    """
    field.require_enumerable()
    if pilot is None:
        pilot = estimate_sup_stats(field, 10_000, seed, tag="lemma23/pilot")
    m, var = pilot.m_hat, pilot.var_hat
    sd = math.sqrt(var)
    ts = [float(t) for t in ts]
    lams = [float(k) * sd for k in lambda_multiples]

    def kernel(rng, size):
        x = field.values(field.draw_drivers(rng, size))
        xp = field.values(field.draw_drivers(rng, size))
        out = np.zeros((len(ts), len(lams)), dtype=np.int64)
        for a, t in enumerate(ts):
            restricted = np.where(x >= t * m, xp, -np.inf).max(axis=1)
            for b, lam in enumerate(lams):
                level = math.sqrt(1 - t * t) * m + lam / math.sqrt(1 - t * t)
                out[a, b] = np.count_nonzero(restricted >= level)
        return out

    hits = sum(map_chunks(kernel, trials, seed, "lemma23"))
    rows = []
    for a, t in enumerate(ts):
        for b, lam in enumerate(lams):
            p = hits[a, b] / trials
            bound = var / lam**2
            se = binomial_stderr(p, trials)
            rows.append(
                {"t": t, "lambda": lam, "frequency": p, "bound": bound, "stderr": se, "pass": p <= bound + 4 * se}
            )
    return rows


def free_energy_batch(values: np.ndarray, beta: float, where=None) -> np.ndarray:
    if not beta > 0:
        raise ValueError("beta must be positive")
    return soft_max(values, beta, axis=1, where=where)


def require_enumerable(field: GaussianField) -> None:
    if not field.enumerable:
        raise NotEnumerableError(f"free energy needs an enumerable field; N={field.size}")
