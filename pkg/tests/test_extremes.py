import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate
from scipy.stats import norm

from peakfield import extremes as E
from peakfield import fields as F
from peakfield.parallel import chunk_sizes, map_chunks, workers
from peakfield.stats import Moments, blocked_moments, bootstrap_mean_var, bootstrap_proportion, soft_max


def test_supremum_of_single_index_field():
    f = F.orthonormal(1)
    s = F.sample(f, 3)
    assert E.supremum(s) == (pytest.approx(s.value_of(0)), 0)


def test_free_energy_examples():
    assert E.free_energy(np.zeros(2), 1.0) == pytest.approx(math.log(2))
    assert E.free_energy(np.array([1.0, 0.0]), 10.0) == pytest.approx(1.0000045, abs=1e-7)
    with pytest.raises(ValueError):
        E.free_energy(np.zeros(2), 0.0)


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(x=arrays(np.float64, st.integers(1, 40), elements=finite), beta=st.floats(1e-3, 1e3))
def test_free_energy_sandwich_is_exact(x, beta):
    F_ = E.free_energy(x, beta)
    M = x.max()
    assert M <= F_
    assert F_ <= M + math.log(x.size) / beta + 1e-12 * (1 + abs(M))


@settings(max_examples=100, deadline=None)
@given(x=arrays(np.float64, st.integers(2, 20), elements=finite), b1=st.floats(0.05, 20), b2=st.floats(0.05, 20))
def test_free_energy_nonincreasing_in_beta(x, b1, b2):
    lo, hi = sorted((b1, b2))
    assert E.free_energy(x, hi) <= E.free_energy(x, lo) + 1e-9


@settings(max_examples=100, deadline=None)
@given(x=arrays(np.float64, st.integers(2, 20), elements=finite), mask=st.integers(1, 2**20))
def test_restricted_free_energy_never_exceeds_full(x, mask):
    where = np.array([(mask >> k) & 1 for k in range(x.size)], dtype=bool)
    full = soft_max(x[None, :], 2.0, axis=1)
    part = soft_max(x[None, :], 2.0, axis=1, where=where[None, :])
    assert part[0] <= full[0]


def test_borell_bound_values():
    assert E.borell_tail_bound(1.0, 0.0) == 1.0
    assert E.borell_tail_bound(1.0, 3.0) == pytest.approx(0.0026998, abs=1e-7)
    grid = [E.borell_tail_bound(1.3, z) for z in np.linspace(0, 6, 50)]
    assert all(a >= b for a, b in zip(grid, grid[1:]))
    assert E.borell_tail_bound(2.0, 3.0) == pytest.approx(2 * norm.sf(1.5), rel=1e-12)


def test_two_iid_moments_against_quadrature():
    m_ref = integrate.quad(lambda t: t * 2 * norm.pdf(t) * norm.cdf(t), -12, 12)[0]
    assert m_ref == pytest.approx(1 / math.sqrt(math.pi), abs=1e-9)
    st_ = E.estimate_sup_stats(F.build_independent(2), 200_000, 1)
    assert abs(st_.m_hat - m_ref) < 4 * st_.m_stderr
    assert abs(st_.var_hat - (1 - 1 / math.pi)) < 4 * st_.var_stderr
    assert st_.m_ci[0] < st_.m_hat < st_.m_ci[1]


def test_single_index_and_k1_block():
    a = E.estimate_sup_stats(F.build_block(1, 5), 100_000, 2)
    assert abs(a.m_hat) < 4 * a.m_stderr
    assert abs(a.var_hat - 1) < 4 * a.var_stderr


def test_entropy_upper_bound():
    f = F.build_independent(64)
    st_ = E.estimate_sup_stats(f, 20_000, 3)
    assert st_.m_hat <= E.expected_sup_upper_bound(f)


def test_borell_envelope_passes():
    st_ = E.estimate_sup_stats(F.build_independent(128), 20_000, 4)
    rows = E.borell_envelope(st_, 1.0, [0.5, 1.0, 2.0])
    assert all(r["pass"] for r in rows)


def test_coupling_reconstructs_and_correlates():
    f = F.build_shifted(4, 1.0)
    trip = E.couple_decompose(f, 0.6, seed=5)
    recon = 0.6 * trip.x_prime.values() + 0.8 * trip.x_dprime.values()
    np.testing.assert_allclose(trip.x.values(), recon, atol=1e-12)
    rng = np.random.default_rng(0)
    x, x1, _ = E.couple_drivers(f, 0.6, rng, 20_000)
    v, v1 = f.values(x)[:, 0], f.values(x1)[:, 0]
    r = np.corrcoef(v, v1)[0, 1]
    assert abs(r - 0.6) < 4 * (1 - 0.36) / math.sqrt(20_000)
    with pytest.raises(ValueError):
        E.couple_decompose(f, 1.5, seed=1)


def test_level_set_inequality_holds():
    rows = E.check_level_set_inequality(F.build_independent(64), [0.5], [1.0, 2.0], 10_000, 6)
    assert all(r["pass"] for r in rows)


# -- statistics utilities -----------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, st.integers(2, 300), elements=st.floats(-1e3, 1e3)), cut=st.integers(1, 299))
def test_moment_merge_matches_direct(x, cut):
    cut = min(cut, x.size - 1)
    merged = Moments.from_array(x[:cut]).merge(Moments.from_array(x[cut:]))
    assert merged.mean == pytest.approx(x.mean(), abs=1e-9)
    assert merged.variance == pytest.approx(x.var(ddof=1), rel=1e-7, abs=1e-7)


def test_blocked_moments_and_bootstrap():
    x = np.random.default_rng(1).standard_normal(50_000)
    m = blocked_moments(x, block=4096)
    assert m.count == x.size and m.mean == pytest.approx(x.mean())
    mean_ci, var_ci = bootstrap_mean_var(x, np.random.default_rng(2))
    assert mean_ci[0] < x.mean() < mean_ci[1]
    assert var_ci[0] < x.var(ddof=1) < var_ci[1]
    lo, hi = bootstrap_proportion(30, 1000, np.random.default_rng(3))
    assert lo < 0.03 < hi


def test_chunking_is_worker_independent():
    def kernel(rng, size):
        return rng.standard_normal(size).sum()

    a = map_chunks(kernel, 50_000, 9, "t")
    with workers(3):
        b = map_chunks(kernel, 50_000, 9, "t")
    assert a == b
    assert sum(chunk_sizes(20_000, 8192)) == 20_000
