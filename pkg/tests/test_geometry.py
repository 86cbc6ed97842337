import math

import numpy as np
import pytest
from scipy import optimize
from scipy.stats import norm
from sklearn.base import clone

from peakfield import fields as F
from peakfield.estimators import SurfaceProfileEstimator
from peakfield.fields import FieldError
from peakfield.geometry import check_nazarov_bounds, check_var_exp, estimate_surface_profile, fd_edges


def max_of_k_peak(K):
    res = optimize.minimize_scalar(
        lambda t: -K * norm.pdf(t) * norm.cdf(t) ** (K - 1), bounds=(0, 4), method="bounded", options={"xatol": 1e-10}
    )
    return -res.fun, res.x


def test_oracle_values():
    L2, t2 = max_of_k_peak(2)
    assert L2 == pytest.approx(0.487, abs=1e-3)
    assert t2 == pytest.approx(0.51, abs=0.02)


@pytest.fixture(scope="module")
def profiles():
    return {
        1: estimate_surface_profile(F.orthonormal(1), 300_000, seed=1),
        2: estimate_surface_profile(F.orthonormal(2), 300_000, seed=2),
    }


def test_single_half_space_profile(profiles):
    p = profiles[1]
    assert abs(p.L_hat - norm.pdf(0)) <= 0.01
    assert abs(p.density[0] - norm.pdf(p.centers[0])) <= 0.02
    assert p.negative_mass == pytest.approx(0.5, abs=0.01)


def test_two_orthonormal_profile(profiles):
    p = profiles[2]
    L2, _ = max_of_k_peak(2)
    assert abs(p.L_hat - L2) / L2 <= 0.03
    assert p.L_ci[0] <= p.L_hat <= p.L_ci[1]
    ref = 2 * norm.pdf(p.centers) * norm.cdf(p.centers)
    assert np.max(np.abs(p.density - ref)) < 0.03


def test_mass_is_conserved(profiles):
    for p in profiles.values():
        assert abs(p.total_mass() - 1.0) <= 1e-9
        assert np.all(np.diff(p.cdf) >= 0)


def test_block_profile_matches_max_of_k():
    p = estimate_surface_profile(F.build_block(4, 8), 300_000, seed=3)
    L4, _ = max_of_k_peak(4)
    assert abs(p.L_hat - L4) / L4 <= 0.03


def test_explicit_bins_and_validation():
    edges = np.linspace(0, 5, 26)
    p = estimate_surface_profile(F.orthonormal(2), 10_000, bins=edges, seed=4)
    assert np.array_equal(p.edges, edges)
    with pytest.raises(ValueError):
        estimate_surface_profile(F.orthonormal(2), 10_000, bins="sturges")
    with pytest.raises(FieldError):
        estimate_surface_profile(F.build_directed_polymer(2), 1000)
    with pytest.raises(FieldError):
        estimate_surface_profile(F.build_explicit(factor=np.eye(2), means=[0.1, 0.0]), 1000)
    with pytest.raises(FieldError):
        estimate_surface_profile(F.build_explicit(factor=0.5 * np.eye(2)), 1000)


def test_fd_edges_cover_the_tail():
    pilot = np.random.default_rng(5).standard_normal(10_000)
    e = fd_edges(pilot)
    assert e[0] == 0 and e[-1] >= 2 * pilot.mean() + 4
    assert fd_edges(pilot, t_max=20.0)[-1] >= 20.0


def test_variance_expectation_two_iid(profiles):
    ve = check_var_exp(F.orthonormal(2), 0, 0, profile=profiles[2])
    assert ve["product"] == pytest.approx(math.sqrt(1 - 1 / math.pi) / math.sqrt(math.pi), abs=0.01)
    assert ve["coarea_pass"]
    assert ve["coarea_bound"] == pytest.approx(1 / (6 * 0.487), rel=0.03)
    with pytest.raises(ValueError):
        check_var_exp(F.orthonormal(1), 1000, 1)


def test_duplicates_do_not_change_the_supremum():
    a = check_var_exp(F.build_block(2, 4), 50_000, 6)
    b = check_var_exp(F.build_independent(2), 50_000, 6)
    for key in ("m_hat", "var_hat", "l_hat", "product"):
        assert a[key] == b[key]


@pytest.mark.parametrize(
    "field",
    [F.build_shifted(256, 1.0), F.build_sk(6, "unit"), F.build_directed_polymer(3, "unit"), F.build_independent(64)],
    ids=["shifted", "sk", "polymer", "independent"],
)
def test_coarea_inequality_across_models(field):
    assert check_var_exp(field, 50_000, 7)["coarea_pass"]


def test_nazarov_constants(profiles):
    n1 = check_nazarov_bounds(profiles[1])
    # phi(t)/t at the first bin centre dominates
    c = profiles[1].centers[0]
    assert n1["c_inv_linear"] == pytest.approx(profiles[1].density[0] / c, rel=1e-12)
    fits = [check_nazarov_bounds(estimate_surface_profile(F.build_independent(k), 100_000, seed=k)) for k in (2, 4, 8)]
    assert all(math.isfinite(f["c_inv_linear"]) for f in fits)
    assert all(f["far_holds_with_linear"] for f in fits)
    assert all(f["ratio_monotone"] for f in fits)


def test_profile_estimator_follows_estimator_conventions():
    est = SurfaceProfileEstimator(bins=np.linspace(0, 4, 9), random_state=0)
    params = clone(est).get_params()
    assert params["random_state"] == 0
    u = np.abs(np.random.default_rng(0).standard_normal(1000))
    fitted = est.fit(u)
    assert fitted is est and est.n_trials_ == 1000
