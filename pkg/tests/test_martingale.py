import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from peakfield import fields as F
from peakfield._rng import stream_id
from peakfield.harness.acceptance import v0_oracle
from peakfield.martingale import (
    check_events,
    default_grid,
    exact_mean_shifted,
    exact_tail_shifted,
    expected_max_iid,
    quadratic_variation,
    simulate_doob_path,
    simulate_doob_paths,
    tail_agreement,
    tail_experiment,
)


def test_default_grid_shape():
    g = default_grid(64, 1e-3)
    assert g.size == 64 and g[0] == 0.0
    assert np.all(np.diff(g) > 0)
    assert g[1] == pytest.approx(1e-3) and g[-1] == pytest.approx(1 - 1e-3)
    with pytest.raises(ValueError):
        default_grid(2)
    with pytest.raises(ValueError):
        default_grid(16, 0.5)


def test_linear_functional_has_unit_density():
    for field in (F.orthonormal(1), F.build_explicit(factor=np.tile([0.6, 0.8], (3, 1)))):
        p = simulate_doob_path(field, default_grid(16), 2000, seed=1)
        np.testing.assert_allclose(p.V_hat, 1.0, atol=1e-12)
        qv, rem = quadratic_variation(p)
        assert qv + rem == pytest.approx(1.0, abs=1e-12)


def test_v0_two_orthonormal_rows():
    assert v0_oracle() == pytest.approx(0.5, abs=1e-8)
    p = simulate_doob_path(F.orthonormal(2), [0.0], 100_000, seed=2)
    assert abs(p.V_hat[0] - 0.5) <= 0.02
    assert abs(p.V_hat[0] - 0.5) <= 4 * p.V_stderr[0]


def _naive_and_split(M, reps, seed):
    """Independent re-implementation at t = 0, B = 0 for two orthonormal rows."""
    rng = np.random.default_rng(seed)
    naive, split = [], []
    for _ in range(reps):
        Y = rng.standard_normal((M, 2))
        Yg = Y * Y.max(axis=1, keepdims=True)
        naive.append(float(Yg.mean(axis=0) @ Yg.mean(axis=0)))
        split.append(float(Yg[: M // 2].mean(axis=0) @ Yg[M // 2:].mean(axis=0)))
    return np.array(naive), np.array(split)


def test_split_sample_estimator_removes_the_square_bias():
    M, reps = 64, 3000
    naive, split = _naive_and_split(M, reps, 3)
    se = naive.std() / math.sqrt(reps)
    assert naive.mean() - 0.5 > 4 * se  # the plain square is biased upwards
    assert abs(split.mean() - 0.5) < 4 * split.std() / math.sqrt(reps)
    ours = np.array(
        [simulate_doob_path(F.orthonormal(2), [0.0], M, seed=4, stream=stream_id("bias", k)).V_hat[0] for k in range(reps)]
    )
    assert abs(ours.mean() - 0.5) < 4 * ours.std() / math.sqrt(reps)


def test_s_hat_at_zero_matches_expected_maximum():
    paths = simulate_doob_paths(F.orthonormal(2), 40, default_grid(8), 20_000, seed=5)
    s0 = np.array([p.S_hat[0] for p in paths])
    se = math.sqrt((1 - 1 / math.pi) / (40 * 20_000))
    assert abs(s0.mean() - 1 / math.sqrt(math.pi)) < 4 * se + 4 * s0.std() / math.sqrt(40)
    gaps = np.array([np.abs(p.S_hat - p.f_B) for p in paths]).mean(axis=0)
    late = gaps[len(gaps) // 2:]
    assert late[-1] < late[0]


def test_quadratic_variation_identity_small():
    paths = simulate_doob_paths(F.orthonormal(2), 60, default_grid(32), 20_000, seed=6)
    totals = np.array([sum(quadratic_variation(p)) for p in paths])
    assert np.all(totals >= 0)
    ref = 1 - 1 / math.pi
    assert abs(totals.mean() - ref) < 4 * totals.std() / math.sqrt(60) + 0.01


def test_v_within_unit_interval_on_zoo():
    for f in (F.as_explicit(F.build_block(2, 4)), F.as_explicit(F.build_directed_polymer(2)), F.orthonormal(5)):
        for p in simulate_doob_paths(f, 3, default_grid(16), 5000, seed=7):
            assert np.all(p.V_hat <= 1 + 3 * p.V_stderr)
            assert np.all(p.V_hat >= -3 * p.V_stderr)


def test_rejects_unsupported_inputs():
    with pytest.raises(TypeError):
        simulate_doob_path(F.build_block(2, 4), [0.0], 1000)
    with pytest.raises(ValueError):
        simulate_doob_path(F.build_explicit(factor=np.eye(2), means=[1.0, 0.0]), [0.0], 1000)
    with pytest.raises(ValueError):
        simulate_doob_path(F.orthonormal(2), [0.0, 0.9995], 1000)
    with pytest.raises(ValueError):
        simulate_doob_path(F.orthonormal(2), [0.5, 0.2], 1000)


def test_events_single_index():
    paths = simulate_doob_paths(F.orthonormal(1), 10, default_grid(16), 1000, seed=8)
    ev = check_events(paths, F.orthonormal(1), 1e-3, 0.1, 1.0, require_alpha=False)
    assert ev["e1_frequency"] == 0.0
    assert ev["e2_minus_e1_frequency"] <= ev["not_e1_frequency"]


def test_events_require_alpha_condition():
    paths = simulate_doob_paths(F.orthonormal(4), 4, default_grid(8), 1000, seed=9)
    with pytest.raises(ValueError):
        check_events(paths, F.orthonormal(4), 0.01, 0.1, 1.0)


# -- exact tails --------------------------------------------------------------


def test_exact_tail_single_index_is_normal_quantile():
    assert exact_tail_shifted(1, 1.0, 1.281552) == pytest.approx(0.1, abs=1e-6)
    assert exact_tail_shifted(1, 0.7, 0.3) == pytest.approx(norm.sf(0.3), abs=1e-10)
    assert exact_tail_shifted(5, 1.0, -math.inf) == 1.0


def test_exact_tail_two_indices_against_bivariate_cdf():
    rho = 1 - 0.5
    mvn = multivariate_normal(mean=[0, 0], cov=[[1, rho], [rho, 1]])
    for x in (-1.0, 0.0, 0.7, 2.0):
        assert exact_tail_shifted(2, 1.0, x) == pytest.approx(1 - mvn.cdf([x, x]), abs=1e-6)


def test_exact_tail_monotone():
    xs = np.linspace(-2, 6, 40)
    p = [exact_tail_shifted(1024, 1.0, x) for x in xs]
    assert all(a >= b for a, b in zip(p, p[1:]))


def test_expected_max_closed_forms():
    assert expected_max_iid(1) == 0.0
    assert expected_max_iid(2) == pytest.approx(1 / math.sqrt(math.pi), abs=1e-9)
    assert expected_max_iid(3) == pytest.approx(1.5 / math.sqrt(math.pi), abs=1e-9)
    assert exact_mean_shifted(64, 1.0) == pytest.approx(expected_max_iid(64) / math.sqrt(2), rel=1e-12)


def test_tail_exponent_examples():
    f = F.build_shifted(2**16, 1.0)
    r = tail_experiment(f, [0.0, 0.5])
    assert 0 < r.probabilities[0] < 1 and r.exponents[0] < 0.1
    assert r.exponents[1] >= 0.125
    assert r.method == "exact"


def test_tail_agreement_with_simulation():
    f = F.build_shifted(4096, 1.0)
    m = exact_mean_shifted(4096, 1.0)
    rows = tail_agreement(f, [m, m + 0.5, m + 1.0], 200_000, 10)
    assert all(r["pass"] for r in rows)


def test_monte_carlo_tail_flags_empty_points():
    r = tail_experiment(F.build_independent(256), [0.1, 0.3, 5.0], trials=20_000, seed=11)
    assert r.method == "monte-carlo"
    assert r.lower_bound_only.tolist() == [False, False, True]
    assert np.all(r.exponents[:2] > r.borell_exponents[:2])
