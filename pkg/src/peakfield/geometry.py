"""Gaussian surface-area profile of the polytope ``K = {x : <x, v_i> <= 1 for all i}``.

With unit rows, ``u(x) = max_i <v_i, x>`` has ``|grad u| = 1`` almost
everywhere and ``u^{-1}(t) = boundary of tK``, so by the co-area formula the
density of ``u(Gamma)`` at ``t >= 0`` is ``gamma+(K_t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._rng import make_rng, stream_id
from .estimators import SurfaceProfileEstimator
from .fields import ExplicitField, GaussianField, FieldError
from .parallel import map_chunks
from .stats import blocked_moments, bootstrap_mean_var

UNIT_TOL = 1e-12
PILOT_TRIALS = 10_000


@dataclass
class SurfaceProfile:
    edges: np.ndarray
    density: np.ndarray
    density_ci: np.ndarray
    negative_mass: float
    overflow_mass: float
    cdf: np.ndarray
    trials: int
    L_hat: float
    L_bin: int
    L_ci: tuple[float, float]
    m_hat: float
    var_hat: float
    var_stderr: float
    suprema: np.ndarray = dc_field(repr=False)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def total_mass(self) -> float:
        return float(self.density @ self.widths + self.negative_mass + self.overflow_mass)

    def rows(self) -> list[dict]:
        return [
            {
                "t_low": float(a),
                "t_high": float(b),
                "density": float(d),
                "ci_low": float(lo),
                "ci_high": float(hi),
            }
            for a, b, d, (lo, hi) in zip(self.edges[:-1], self.edges[1:], self.density, self.density_ci)
        ]


def require_unit_variance(field: GaussianField) -> None:
    """Refuse fields whose index variances are not all one."""
    if isinstance(field, ExplicitField):
        if field.means is not None:
            raise FieldError("the surface-area profile needs a centred field")
        norms = field.row_norms
        if np.max(np.abs(norms - 1.0)) > UNIT_TOL:
            raise FieldError(f"row norms must equal one (worst deviation {np.max(np.abs(norms - 1.0)):.3g})")
        return
    probe = np.unique(np.linspace(0, field.size - 1, min(field.size, 64)).astype(np.int64))
    var = np.array([field.variance_of(i) for i in probe])
    if np.max(np.abs(var - 1.0)) > UNIT_TOL:
        raise FieldError("the surface-area profile needs unit variances; use unit normalisation")


def _simulate(field: GaussianField, trials: int, seed: int, tag: str) -> np.ndarray:
    return np.concatenate(map_chunks(lambda rng, size: field.draw_suprema(rng, size), trials, seed, tag))


def fd_edges(pilot: np.ndarray, t_max: float | None = None) -> np.ndarray:
    """Freedman-Diaconis bins from a pilot sample, covering ``[0, max(t_max, 2 m + 4)]``."""
    q75, q25 = np.percentile(pilot, [75, 25])
    width = 2.0 * (q75 - q25) * pilot.size ** (-1.0 / 3.0)
    reach = 2.0 * float(pilot.mean()) + 4.0
    t_max = reach if t_max is None else max(float(t_max), reach)
    n_bins = max(1, int(math.ceil(t_max / width)))
    return np.linspace(0.0, n_bins * width, n_bins + 1)


def estimate_surface_profile(
    field: GaussianField,
    trials: int,
    bins="fd",
    seed: int = 0,
    t_max: float | None = None,
    pilot_trials: int = PILOT_TRIALS,
    tag: str = "surface",
) -> SurfaceProfile:
    """Histogram density of ``u(Gamma)`` on ``t >= 0`` with bootstrap intervals.

    ``bins="fd"`` fixes Freedman-Diaconis edges from a pilot run on its own
    stream; an explicit edge array must start at 0.
    """
    require_unit_variance(field)
    if trials < 2:
        raise ValueError("need at least two trials")
    if isinstance(bins, str):
        if bins != "fd":
            raise ValueError(f"unknown bin rule {bins!r}")
        edges = fd_edges(_simulate(field, pilot_trials, seed, tag + "/pilot"), t_max)
    else:
        edges = np.asarray(bins, dtype=float)
    u = _simulate(field, trials, seed, tag)
    est = SurfaceProfileEstimator(bins=edges, random_state=make_rng(seed, stream_id(tag + "/bootstrap"))).fit(u)
    mom = blocked_moments(u)
    return SurfaceProfile(
        edges=est.edges_,
        density=est.density_,
        density_ci=est.density_ci_,
        negative_mass=est.negative_mass_,
        overflow_mass=est.overflow_mass_,
        cdf=est.cdf_,
        trials=est.n_trials_,
        L_hat=est.L_,
        L_bin=est.L_bin_,
        L_ci=est.L_ci_,
        m_hat=mom.mean,
        var_hat=mom.variance,
        var_stderr=mom.variance_stderr,
        suprema=u,
    )


def estimate_L(profile: SurfaceProfile) -> tuple[float, int, tuple[float, float]]:
    """``L(K) = sup_{t >= 0} gamma+(K_t)`` as the largest bin density."""
    return profile.L_hat, profile.L_bin, profile.L_ci


def check_var_exp(field: GaussianField, trials: int, seed: int, bins="fd", profile: SurfaceProfile | None = None) -> dict:
    """Product ``sd(M) E M``, the co-area bound ``sd(M) >= 1/(6 L)`` and ``Var M log N``."""
    if field.size < 2:
        raise ValueError("the variance-expectation bound needs N >= 2")
    if profile is None:
        profile = estimate_surface_profile(field, trials, bins, seed)
    sd = math.sqrt(profile.var_hat)
    sd_se = profile.var_stderr / (2.0 * sd) if sd > 0 else math.inf
    bound = 1.0 / (6.0 * profile.L_hat)
    _, var_ci = bootstrap_mean_var(profile.suprema, make_rng(seed, stream_id("var-exp/bootstrap")))
    log_n = math.log(field.size)
    return {
        "n": field.size,
        "trials": profile.trials,
        "m_hat": profile.m_hat,
        "var_hat": profile.var_hat,
        "var_ci": list(var_ci),
        "sd_hat": sd,
        "sd_stderr": sd_se,
        "product": sd * profile.m_hat,
        "l_hat": profile.L_hat,
        "l_ci": list(profile.L_ci),
        "coarea_bound": bound,
        "coarea_pass": sd + 4.0 * sd_se >= bound,
        "c_fit": profile.var_hat * log_n,
    }


def check_nazarov_bounds(profile: SurfaceProfile, m_hat: float | None = None) -> dict:
    """Smallest constants in ``gamma+(K_t) <= C t`` and ``gamma+(K_t) <= 4 C m`` for ``t >= 2m``.

    Bin densities are compared at bin centres. The ratio
    ``gamma+(K_t) / gamma(tK)`` (density over the distribution function) is
    checked for increases that exceed the bootstrap intervals.
    """
    m = profile.m_hat if m_hat is None else float(m_hat)
    t = profile.centers
    dens = profile.density
    linear = float(np.max(dens / t))
    far = t >= 2.0 * m
    far_needed = float(np.max(dens[far]) / (4.0 * m)) if far.any() and m > 0 else math.nan
    cdf_mid = profile.negative_mass + np.concatenate([[0.0], np.cumsum(dens * profile.widths)])[:-1] + 0.5 * dens * profile.widths
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dens / cdf_mid
        lo = profile.density_ci[:, 0] / cdf_mid
        hi = profile.density_ci[:, 1] / cdf_mid
    # empty bins have a degenerate [0, 0] interval and carry no evidence
    ok = np.isfinite(ratio) & (cdf_mid > 0) & (dens > 0)
    idx = np.flatnonzero(ok)
    increases = int(np.count_nonzero(np.diff(ratio[idx]) > 0))
    significant = int(np.count_nonzero(lo[idx][1:] > hi[idx][:-1]))
    return {
        "m_hat": m,
        "c_inv_linear": linear,
        "c_inv_far": far_needed,
        "far_bins": int(far.sum()),
        "far_holds_with_linear": bool(not far.any() or np.max(dens[far]) <= 4.0 * linear * m),
        "ratio_increases": increases,
        "ratio_significant_increases": significant,
        "ratio_monotone": significant == 0,
    }
