"""Free-energy variance curves, the contribution sandwich and free-energy peak events."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._rng import make_rng, stream_id
from .extremes import FreeEnergyStats, couple_drivers, estimate_sup_stats, free_energy_batch
from .fields import GaussianField
from .parallel import map_chunks
from .peaks import PeakEventStats, PeakQuery, _event_stats, peak_sizes
from .stats import binomial_stderr, blocked_moments, bootstrap_mean_var, bootstrap_proportion

SIGMA_MARGIN = 1.2


class BetaHypothesisError(ValueError):
    """The inverse temperature is below the requirement of the free-energy peak bound."""

    def __init__(self, branch: str, beta: float, required: float):
        super().__init__(f"beta={beta:.6g} is below the {branch} requirement {required:.6g}")
        self.branch = branch
        self.beta = beta
        self.required = required


@dataclass
class FreeEnergyCurve:
    betas: np.ndarray
    stats: list[FreeEnergyStats]
    sigma_tilde: np.ndarray
    sup_mean: float
    sup_var: float
    trials: int
    free_energies: np.ndarray = dc_field(repr=False)
    suprema: np.ndarray = dc_field(repr=False)

    @property
    def means(self) -> np.ndarray:
        return np.array([s.f_hat for s in self.stats])

    @property
    def variances(self) -> np.ndarray:
        return np.array([s.var_hat for s in self.stats])

    def sigma_tilde_at(self, beta: float) -> float:
        """Piecewise-linear interpolation of ``sigma_tilde`` (flat outside the grid)."""
        return float(np.interp(beta, self.betas, self.sigma_tilde))

    def rows(self) -> list[dict]:
        return [
            {
                "beta": s.beta,
                "f_hat": s.f_hat,
                "var_hat": s.var_hat,
                "f_ci_low": s.f_ci[0],
                "f_ci_high": s.f_ci[1],
                "var_ci_low": s.var_ci[0],
                "var_ci_high": s.var_ci[1],
                "sigma_tilde": float(st),
            }
            for s, st in zip(self.stats, self.sigma_tilde)
        ]


def _check_grid(betas) -> np.ndarray:
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    if betas.size == 0 or np.any(betas <= 0) or not np.all(np.isfinite(betas)):
        raise ValueError("inverse temperatures must be positive and finite")
    if np.any(np.diff(betas) <= 0):
        raise ValueError("the beta grid must be strictly ascending")
    return betas


def estimate_fe_curve(
    field: GaussianField,
    betas,
    trials: int,
    seed: int,
    sigma_tilde=None,
    tag: str = "fe",
) -> FreeEnergyCurve:
    """Mean and variance of ``F_beta`` on a grid, all temperatures on the same drivers.

    ``sigma_tilde`` is an upper bound on ``sqrt(Var F_beta)``; by default it is
    the empirical standard deviation inflated by 20%.
    """
    field.require_enumerable()
    betas = _check_grid(betas)
    if int(trials) < 2:
        raise ValueError("need at least two trials")

    def kernel(rng, size):
        vals = field.values(field.draw_drivers(rng, size))
        F = np.column_stack([free_energy_batch(vals, b) for b in betas])
        return F, vals.max(axis=1)

    parts = map_chunks(kernel, trials, seed, tag)
    F = np.concatenate([p[0] for p in parts])
    M = np.concatenate([p[1] for p in parts])
    rng = make_rng(seed, stream_id(tag + "/bootstrap"))
    stats = []
    for k, b in enumerate(betas):
        mom = blocked_moments(F[:, k])
        f_ci, var_ci = bootstrap_mean_var(F[:, k], rng)
        stats.append(FreeEnergyStats(float(b), mom.mean, mom.variance, mom.count, f_ci, var_ci))
    if sigma_tilde is None:
        st = SIGMA_MARGIN * np.sqrt([s.var_hat for s in stats])
    else:
        st = np.broadcast_to(np.asarray(sigma_tilde, dtype=float), betas.shape).copy()
        if np.any(st <= 0):
            raise ValueError("sigma_tilde must be positive")
    return FreeEnergyCurve(
        betas=betas,
        stats=stats,
        sigma_tilde=st,
        sup_mean=float(M.mean()),
        sup_var=float(M.var(ddof=1)),
        trials=F.shape[0],
        free_energies=F,
        suprema=M,
    )


def contribution_threshold(N: int, delta: float, m_hat: float, c: float = 1.0) -> float:
    """``c log N / (delta m)``; zero for a one-point index set."""
    if N == 1:
        return 0.0
    if m_hat <= 0:
        return math.inf
    return c * math.log(N) / (delta * m_hat)


def check_fe_contribution(
    field: GaussianField,
    delta: float,
    beta: float,
    trials: int,
    seed: int,
    c: float = 1.0,
    pilot_trials: int = 10_000,
    m_hat: float | None = None,
) -> dict:
    """Frequencies of the two sides of ``F(X) >= F(X_U') >= F(X) - 1/beta``.

    ``U' = {i : X'_i >= (1 - delta) m}`` for the coupling
    ``X = a X' + sqrt(1-a^2) X''`` with ``a = 1 - delta/4``. An empty ``U'``
    is a failure of the right inequality and is also counted on its own.
    """
    field.require_enumerable()
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if m_hat is None:
        m_hat = estimate_sup_stats(field, pilot_trials, seed, tag="fe-contrib/pilot").m_hat
    needed = contribution_threshold(field.size, delta, m_hat, c)
    if not beta > needed:
        raise BetaHypothesisError("log N / (delta m)", beta, needed)
    alpha = 1.0 - delta / 4.0
    threshold = (1.0 - delta) * m_hat

    def kernel(rng, size):
        x, x1, _ = couple_drivers(field, alpha, rng, size)
        vx = field.values(x)
        in_u = field.values(x1) >= threshold
        full = free_energy_batch(vx, beta)
        part = free_energy_batch(vx, beta, where=in_u)
        empty = ~in_u.any(axis=1)
        left = part > full
        right = part < full - 1.0 / beta
        return np.array([left.sum(), right.sum(), empty.sum(), (right & ~empty).sum()])

    left, right, empty, right_nonempty = (int(v) for v in sum(map_chunks(kernel, trials, seed, "fe-contrib")))
    p = right / trials
    ci = bootstrap_proportion(right, trials, make_rng(seed, stream_id("fe-contrib/bootstrap")))
    scale = delta**2 * m_hat**2
    return {
        "delta": delta,
        "beta": beta,
        "beta_required": needed,
        "alpha": alpha,
        "m_hat": m_hat,
        "trials": trials,
        "left_failures": left,
        "right_failures": right,
        "empty_u": empty,
        "right_failures_nonempty": right_nonempty,
        "right_frequency": p,
        "right_ci": list(ci),
        "right_stderr": binomial_stderr(p, trials),
        "c_fit": p * scale,
        "left_pass": left == 0,
    }


def hypothesis_branches(
    N: int, delta: float, eps: float, m_hat: float, sigma_tilde: float, max_variance: float = 1.0
) -> dict[str, float]:
    """The three lower bounds on ``beta`` (without the leading constant).

    ``eps`` is in covariance units; dividing by ``max_variance`` keeps the
    last branch in units of inverse field values for unnormalised fields.
    """
    return {
        "log N / (delta m)": contribution_threshold(N, delta, m_hat),
        "1 / sigma_tilde": 1.0 / sigma_tilde,
        "delta eps^2 / sigma_tilde^3": delta * eps**2 / (max_variance * sigma_tilde**3),
    }


def check_beta_hypothesis(
    beta: float, N: int, delta: float, eps: float, m_hat: float, sigma_tilde: float, c1: float = 1.0, max_variance: float = 1.0
):
    """Raise :class:`BetaHypothesisError` naming the first violated branch."""
    for branch, bound in hypothesis_branches(N, delta, eps, m_hat, sigma_tilde, max_variance).items():
        if beta < c1 * bound:
            raise BetaHypothesisError(branch, beta, c1 * bound)


def solve_beta(
    sigma_tilde_of,
    N: int,
    delta: float,
    eps: float,
    m_hat: float,
    c1: float = 1.0,
    beta0: float | None = None,
    max_iter: int = 10,
    rtol: float = 1e-6,
    max_variance: float = 1.0,
) -> tuple[float, int]:
    """Fixed point of ``beta = c1 max(branches(sigma_tilde(beta)))``.

    ``sigma_tilde_of`` maps ``beta`` to the upper bound on the free-energy
    standard deviation. Returns the last iterate and the iteration count;
    the iterate is only a candidate and is re-checked by the caller.
    """
    beta = beta0 if beta0 is not None else c1 * contribution_threshold(N, delta, m_hat)
    beta = max(beta, 1e-12)
    for it in range(1, max_iter + 1):
        st = sigma_tilde_of(beta)
        target = c1 * max(hypothesis_branches(N, delta, eps, m_hat, st, max_variance).values())
        if abs(target - beta) <= rtol * max(beta, 1e-300):
            return target, it
        beta = target
    return beta, max_iter


def estimate_peak_event_fe(
    field: GaussianField,
    query: PeakQuery,
    ell: int,
    beta: float,
    trials: int,
    seed: int,
    sigma_tilde: float | None = None,
    c1: float = 1.0,
    pilot_trials: int = 10_000,
) -> PeakEventStats:
    """Peak event of :func:`peaks.estimate_peak_event`, logged against the free-energy bound.

    Without ``sigma_tilde`` the pilot run estimates ``sqrt(Var F_beta)`` and
    inflates it by 20%. The pilot draws the same drivers as the supremum
    pilot of the plain estimator.
    """
    field.require_enumerable()
    if int(ell) < 1:
        raise ValueError("ell must be >= 1")
    curve = estimate_fe_curve(field, [beta], pilot_trials, seed, sigma_tilde=sigma_tilde, tag="peaks/pilot")
    m_ref = curve.sup_mean if query.m_ref is None else query.m_ref
    st = float(curve.sigma_tilde[0])
    check_beta_hypothesis(beta, field.size, query.delta, query.eps_for(field), m_ref, st, c1, field.max_variance)
    sizes = peak_sizes(field, query, m_ref, trials, seed, "peaks")
    sd_sup = math.sqrt(curve.sup_var)
    return _event_stats(sizes, ell, m_ref, field, query, sd_sup, seed, "peaks-fe", beta=beta, sigma_tilde=st)
