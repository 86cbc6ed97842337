"""Doob martingale of the supremum along Brownian motion, and moderate-deviation tails.

For ``f(x) = max_i <v_i, x>`` and a standard Brownian motion ``B`` in the
driver space, ``S_t = E[f(B_1) | F_t]`` has quadratic-variation density
``V_t = |E_Y[Y g_t(Y)]|^2`` where ``g_t(y) = (f(B_t + sqrt(1-t) y) - f(B_t)) / sqrt(1-t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtri

from ._kernels import doob_node
from ._rng import make_rng
from .fields import ExplicitField, GaussianField, ShiftedField
from .parallel import map_chunks
from .stats import binomial_stderr

DEFAULT_ETA = 1e-3
DEFAULT_NODES = 64
DEFAULT_INNER = 100_000
N_GROUPS = 16
_BLOCK_ELEMENTS = 1 << 22


class QuadratureError(RuntimeError):
    pass


@dataclass
class MartingalePath:
    grid: np.ndarray
    B: np.ndarray = dc_field(repr=False)
    f_B: np.ndarray = dc_field(repr=False)
    S_hat: np.ndarray = dc_field(repr=False)
    V_hat: np.ndarray = dc_field(repr=False)
    V_stderr: np.ndarray = dc_field(repr=False)
    inner_samples: int = 0
    eta: float = DEFAULT_ETA
    f_terminal: float = math.nan
    seed: int | None = None
    stream: int | None = None

    @property
    def qv_hat(self) -> float:
        return quadratic_variation(self)[0]


def default_grid(n_nodes: int = DEFAULT_NODES, eta: float = DEFAULT_ETA) -> np.ndarray:
    """``0``, then geometric spacing from ``eta`` up to ``1/2`` and mirrored down to ``1 - eta``."""
    _check_eta(eta)
    if n_nodes < 3:
        raise ValueError("need at least three grid nodes")
    left = n_nodes // 2
    right = n_nodes - 1 - left
    lo = eta * (0.5 / eta) ** (np.arange(left) / max(left - 1, 1))
    hi = 1.0 - eta * (0.5 / eta) ** ((right - np.arange(1, right + 1)) / right)
    return np.concatenate([[0.0], lo, hi])


def _check_eta(eta: float) -> float:
    if not 0.0 < eta <= 0.1:
        raise ValueError(f"terminal cutoff must lie in (0, 0.1], got {eta}")
    return float(eta)


def _check_grid(grid, eta: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("grid must be a non-empty vector")
    if grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at t >= 0 and increase strictly")
    if grid[-1] > 1.0 - eta + 1e-15:
        raise ValueError(f"grid ends at {grid[-1]} beyond 1 - eta = {1 - eta}")
    return grid


def _require_explicit(field: GaussianField) -> ExplicitField:
    if not isinstance(field, ExplicitField):
        raise TypeError("the martingale construction needs an explicit field (use fields.as_explicit)")
    if field.means is not None:
        raise ValueError("the martingale construction needs a centred field")
    return field


def _factor(field: ExplicitField) -> np.ndarray | None:
    """Factor matrix, or ``None`` when it is the identity (values are the coordinates)."""
    v = field.scaled_factor
    if v.shape[0] == v.shape[1] and np.array_equal(v, np.eye(v.shape[0])):
        return None
    return v


def _node(rng, v, b, scale, inner, n_groups):
    """Split-sample ``V`` with its standard error, and ``E g``, at one node.

    ``g`` is split as ``<Y, w> + r`` with ``w`` the row of the current
    maximiser; ``E[Y <Y, w>] = w`` and ``E <Y, w> = 0`` are known, so only
    the residual ``r`` is simulated. It is zero unless the maximiser moves,
    which removes the noise where ``f`` is locally linear.
    """
    d = b.size
    base = b if v is None else v @ b
    istar = int(np.argmax(base))
    f_base = float(base[istar])
    w = np.zeros(d) if v is None else v[istar].copy()
    if v is None:
        w[istar] = 1.0
    half = inner // 2
    per_block = max(2 * n_groups, (_BLOCK_ELEMENTS // max(d, base.size)) // 2 * 2)
    total_r = 0.0
    groups = np.zeros((2 * n_groups, d))
    done = 0
    while done < 2 * half:
        rows = min(per_block, 2 * half - done)
        Y = rng.standard_normal((rows, d))
        YV = Y if v is None else Y @ v.T
        r_sum, sums = doob_node(Y, YV, base, scale, f_base, istar, n_groups)
        total_r += r_sum
        groups += sums
        done += rows
    n_per_group = half / n_groups
    a_groups = groups[:n_groups] / n_per_group
    b_groups = groups[n_groups:] / n_per_group
    a = w + a_groups.mean(axis=0)
    c = w + b_groups.mean(axis=0)
    value = float(a @ c)
    # delta method with group means: Var(a.c) ~ c' Cov(a) c + a' Cov(c) a
    var = np.var(a_groups @ c, ddof=1) / n_groups + np.var(b_groups @ a, ddof=1) / n_groups
    return value, math.sqrt(var), f_base, total_r / (2 * half)


def _path(field: ExplicitField, grid, inner, rng, eta, n_groups):
    v = _factor(field)
    d = field.driver_dim
    dt = np.diff(np.concatenate([[0.0], grid, [1.0]]))
    steps = rng.standard_normal((grid.size + 1, d)) * np.sqrt(dt)[:, None]
    B = np.cumsum(steps, axis=0)
    V = np.empty(grid.size)
    se = np.empty(grid.size)
    S = np.empty(grid.size)
    fB = np.empty(grid.size)
    for k, t in enumerate(grid):
        scale = math.sqrt(1.0 - t)
        V[k], se[k], fB[k], mean_g = _node(rng, v, B[k], scale, inner, n_groups)
        S[k] = fB[k] + scale * mean_g
    terminal = B[-1] if v is None else v @ B[-1]
    return MartingalePath(grid, B[:-1], fB, S, V, se, 2 * (inner // 2), eta, float(terminal.max()))


def simulate_doob_path(
    field: GaussianField,
    grid=None,
    inner_samples: int = DEFAULT_INNER,
    seed: int = 0,
    stream: int = 0,
    eta: float = DEFAULT_ETA,
    n_groups: int = N_GROUPS,
) -> MartingalePath:
    """One outer Brownian path with inner Monte Carlo estimates at every grid node.

    ``V_hat`` is the inner product of the two half-sample means of ``Y g_t(Y)``,
    which is unbiased for ``V_t``; ``S_hat = f(B_t) + sqrt(1-t) mean(g_t)``.
    Inner draws come from the same stream, after the Brownian increments.
    """
    field = _require_explicit(field)
    eta = _check_eta(eta)
    grid = default_grid(eta=eta) if grid is None else _check_grid(grid, eta)
    if inner_samples < 4 * n_groups:
        raise ValueError(f"need at least {4 * n_groups} inner samples")
    path = _path(field, grid, int(inner_samples), make_rng(seed, stream), eta, n_groups)
    path.seed, path.stream = seed, stream
    return path


def simulate_doob_paths(
    field: GaussianField,
    n_paths: int,
    grid=None,
    inner_samples: int = DEFAULT_INNER,
    seed: int = 0,
    eta: float = DEFAULT_ETA,
    tag: str = "doob",
) -> list[MartingalePath]:
    """Independent outer paths, one stream each, returned in path order."""
    field = _require_explicit(field)
    eta = _check_eta(eta)
    grid = default_grid(eta=eta) if grid is None else _check_grid(grid, eta)
    if inner_samples < 4 * N_GROUPS:
        raise ValueError(f"need at least {4 * N_GROUPS} inner samples")

    def kernel(rng, size):
        return _path(field, grid, int(inner_samples), rng, eta, N_GROUPS)

    return map_chunks(kernel, n_paths, seed, tag, chunk_size=1)


def quadratic_variation(path: MartingalePath) -> tuple[float, float]:
    """Trapezoid integral of ``V_hat`` over the grid, and the bound ``1 - t_K`` on the rest.

    The part before the first node is integrated as a constant. ``V_t <= 1``
    makes the remainder bound rigorous.
    """
    g, V = path.grid, path.V_hat
    qv = float(np.trapezoid(V, g)) if g.size > 1 else 0.0
    qv += float(V[0] * g[0])
    return qv, float(1.0 - g[-1])


def check_events(
    paths: list[MartingalePath],
    field: GaussianField,
    eps: float,
    delta: float,
    alpha: float,
    m_hat: float | None = None,
    require_alpha: bool = True,
) -> dict:
    """Frequencies of ``E1 = {V <= 1 - eps on [0, delta]}``, ``E2 = {f(B) <= (alpha/2) sqrt(log N) on [0, delta]}``.

    ``E2 \\ E1`` is compared with ``N^(-alpha^2/32)``; its fitted constant is
    the frequency times ``N^(alpha^2/32)``. Only grid nodes in ``[0, delta]``
    are inspected.
    """
    N = field.size
    log_n = math.log(N) if N > 1 else 0.0
    if require_alpha:
        if m_hat is None:
            m_hat = float(np.mean([p.S_hat[0] for p in paths]))
        if m_hat < alpha * math.sqrt(log_n):
            raise ValueError(f"m_hat={m_hat:.4g} is below alpha sqrt(log N) = {alpha * math.sqrt(log_n):.4g}")
    if not paths:
        raise ValueError("no paths")
    level = 0.5 * alpha * math.sqrt(log_n)
    e1 = np.array([np.all(p.V_hat[p.grid <= delta] <= 1.0 - eps) for p in paths])
    e2 = np.array([np.all(p.f_B[p.grid <= delta] <= level) for p in paths])
    n = len(paths)
    f_diff = float(np.mean(e2 & ~e1))
    rate = N ** (-(alpha**2) / 32.0)
    return {
        "paths": n,
        "eps": eps,
        "delta": delta,
        "alpha": alpha,
        "m_hat": m_hat,
        "e1_frequency": float(np.mean(e1)),
        "e2_frequency": float(np.mean(e2)),
        "e2_minus_e1_frequency": f_diff,
        "not_e1_frequency": float(np.mean(~e1)),
        "e2_minus_e1_stderr": binomial_stderr(f_diff, n),
        "rate": rate,
        "c_fit": f_diff / rate,
    }


# ---------------------------------------------------------------------------
# tails of the shifted field


def _shifted_sds(alpha: float) -> tuple[float, float]:
    if not 0.0 < alpha**2 / 2.0 < 1.0:
        raise ValueError(f"alpha must lie in (0, sqrt 2), got {alpha}")
    return math.sqrt(1.0 - alpha**2 / 2.0), alpha / math.sqrt(2.0)


def _quad(fun, lo, hi, points):
    points = sorted(p for p in points if lo < p < hi)
    value, err = 0.0, 0.0
    for a, b in zip([lo] + points, points + [hi]):
        v, e, info = integrate.quad(fun, a, b, epsabs=1e-12, epsrel=1e-12, limit=400, full_output=1)[:3]
        value += v
        err += e
    if err > 1e-10:
        raise QuadratureError(f"quadrature error estimate {err:.3g} exceeds 1e-10")
    return value


_W = 12.0  # standard-normal mass beyond 12 is below 1e-32


def exact_tail_shifted(N: int, alpha: float, x: float) -> float:
    """``P(max_i (Z + Z_i) >= x)`` by adaptive quadrature over the common part ``Z``.

    With ``Z = a W`` and ``Z_i = b W_i`` the integrand is
    ``phi(w) (1 - Phi((x - a w)/b)^N)``, evaluated as
    ``-expm1(N log Phi(.))`` so that tiny tails keep their relative accuracy.
    """
    N = int(N)
    if N < 1:
        raise ValueError("N must be >= 1")
    a, b = _shifted_sds(alpha)
    if x == -math.inf:
        return 1.0
    if x == math.inf:
        return 0.0
    pdf = 1.0 / math.sqrt(2.0 * math.pi)

    def integrand(w):
        return pdf * math.exp(-0.5 * w * w) * -math.expm1(N * log_ndtr((x - a * w) / b))

    # the integrand switches from ~0 to ~phi where (x - a w)/b crosses the median of the max
    q = float(ndtri(0.5 ** (1.0 / N)))
    centre = (x - b * q) / a
    spread = b / a
    points = [centre + k * spread for k in (-4, -1, 0, 1, 4)] + [0.0]
    value = _quad(integrand, -_W, _W, points)
    return min(max(value, 0.0), 1.0)


def expected_max_iid(N: int) -> float:
    """``E max`` of ``N`` i.i.d. standard normals by quadrature of the survival function."""
    N = int(N)
    if N == 1:
        return 0.0
    q = float(ndtri(0.5 ** (1.0 / N)))
    pos = _quad(lambda x: -math.expm1(N * log_ndtr(x)), 0.0, 40.0, [q - 1, q, q + 1])
    neg = _quad(lambda x: math.exp(N * log_ndtr(x)), -40.0, 0.0, [q - 1, q, q + 1])
    return pos - neg


def exact_mean_shifted(N: int, alpha: float) -> float:
    """``E max_i (Z + Z_i) = b E max_i W_i`` since ``Z`` is centred."""
    _, b = _shifted_sds(alpha)
    return b * expected_max_iid(N)


@dataclass
class TailReport:
    N: int
    alpha: float | None
    betas: np.ndarray
    m: float
    probabilities: np.ndarray
    stderr: np.ndarray | None
    exponents: np.ndarray
    lower_bound_only: np.ndarray
    method: str
    trials: int | None = None

    @property
    def borell_exponents(self) -> np.ndarray:
        return self.betas**2 / 2.0

    @property
    def sharp_exponents(self) -> np.ndarray | None:
        if self.alpha is None:
            return None
        return self.betas**2 / (2.0 - self.alpha**2)

    @property
    def improves_borell(self) -> np.ndarray:
        return self.exponents >= self.borell_exponents

    def rows(self) -> list[dict]:
        sharp = self.sharp_exponents
        out = []
        for k, beta in enumerate(self.betas):
            out.append(
                {
                    "beta": float(beta),
                    "probability": float(self.probabilities[k]),
                    "stderr": None if self.stderr is None else float(self.stderr[k]),
                    "exponent": float(self.exponents[k]),
                    "lower_bound_only": bool(self.lower_bound_only[k]),
                    "borell_exponent": float(self.borell_exponents[k]),
                    "sharp_exponent": None if sharp is None else float(sharp[k]),
                    "gap_over_borell": float(self.exponents[k] - self.borell_exponents[k]),
                    "improves_borell": bool(self.improves_borell[k]),
                }
            )
        return out


def _exponents(p: np.ndarray, log_n: float, floor: float) -> tuple[np.ndarray, np.ndarray]:
    zero = p <= 0
    with np.errstate(divide="ignore"):
        e = -np.log(np.where(zero, floor, p)) / log_n
    return e, zero


def tail_experiment(
    field: GaussianField,
    betas,
    trials: int | None = None,
    seed: int = 0,
    exact: bool | None = None,
    tag: str = "tail",
) -> TailReport:
    """``P(M >= m + beta sqrt(log N))`` and ``e(beta) = -log P / log N`` on a grid.

    Shifted fields default to the quadrature oracle (with the exact mean);
    other fields are simulated and ``m`` is the sample mean. A grid point
    without exceedances reports ``-log(1/trials)/log N`` as a lower bound.
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    if np.any(betas < 0):
        raise ValueError("beta must be non-negative")
    N = field.size
    if N < 2:
        raise ValueError("tail exponents need N >= 2")
    log_n = math.log(N)
    alpha = field.alpha if isinstance(field, ShiftedField) else None
    if exact is None:
        exact = isinstance(field, ShiftedField) and trials is None
    if exact:
        if not isinstance(field, ShiftedField):
            raise ValueError("the exact tail oracle exists for shifted fields only")
        m = exact_mean_shifted(N, field.alpha)
        p = np.array([exact_tail_shifted(N, field.alpha, m + b * math.sqrt(log_n)) for b in betas])
        e, zero = _exponents(p, log_n, np.finfo(float).tiny)
        return TailReport(N, alpha, betas, m, p, None, e, zero, "exact")
    if trials is None or trials < 2:
        raise ValueError("a Monte Carlo tail experiment needs trials >= 2")
    sup = np.concatenate(map_chunks(lambda rng, size: field.draw_suprema(rng, size), trials, seed, tag))
    m = float(sup.mean())
    levels = m + betas * math.sqrt(log_n)
    p = np.array([np.count_nonzero(sup >= lv) for lv in levels]) / trials
    se = np.array([binomial_stderr(q, trials) for q in p])
    e, zero = _exponents(p, log_n, 1.0 / trials)
    return TailReport(N, alpha, betas, m, p, se, e, zero, "monte-carlo", trials)


def tail_agreement(field: ShiftedField, levels, trials: int, seed: int, tag: str = "tail/check") -> list[dict]:
    """Quadrature tail against simulated frequencies at fixed levels ``x``."""
    sup = np.concatenate(map_chunks(lambda rng, size: field.draw_suprema(rng, size), trials, seed, tag))
    rows = []
    for x in levels:
        exact = exact_tail_shifted(field.size, field.alpha, float(x))
        freq = float(np.count_nonzero(sup >= x)) / trials
        se = binomial_stderr(exact, trials)
        rows.append({"x": float(x), "exact": exact, "frequency": freq, "stderr": se, "pass": abs(freq - exact) <= 4 * se})
    return rows

