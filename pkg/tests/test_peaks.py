import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peakfield import fields as F
from peakfield._rng import make_rng
from peakfield.estimators import PeakCounter, greedy_peak_counts
from peakfield.peaks import (
    PeakQuery,
    check_corollary25,
    check_lemma22_bound,
    estimate_peak_event,
    extract_peaks,
    greedy_maximal,
    peak_sizes,
    shortest_interval,
)


def rescan(field, sample, peaks, threshold, eps):
    """Brute-force re-check of every peak-set invariant."""
    vals = sample.values()
    cov = field.covariance_matrix()
    A = list(map(int, peaks.indices))
    assert all(vals[i] >= threshold for i in A)
    for a in A:
        for b in A:
            if a != b:
                assert abs(cov[a, b]) <= eps
    for i in np.flatnonzero(vals >= threshold):
        if int(i) in A:
            continue
        w = peaks.witness[int(i)]
        assert w in A and abs(cov[i, w]) > eps


def test_query_validation():
    for bad in [dict(delta=0.0, eps=0.1), dict(delta=1.5, eps=0.1), dict(delta=0.5, eps=0.0), dict(delta=0.5, eps=0.1, zeta=0.0)]:
        with pytest.raises(ValueError):
            PeakQuery(**bad)
    with pytest.raises(ValueError):
        PeakQuery(0.5, 0.1).threshold()
    assert PeakQuery(0.25, 0.1, m_ref=2.0).threshold() == 1.5
    assert PeakQuery(0.5, 0.3, normalized=True).eps_for(F.build_directed_polymer(2)) == pytest.approx(1.2)


def test_block_example_one_peak_per_block():
    f = F.build_block(4, 8)
    s = F.FieldSample(f, np.array([0.4, 1.3, 0.2, 0.9]))
    p = extract_peaks(s, PeakQuery(1.0, 0.5, m_ref=1.0))
    assert p.indices.tolist() == [2, 6, 0, 4]
    assert len(p) == 4 and p.level_set_size == 8
    rescan(f, s, p, 0.0, 0.5)


def test_independent_field_takes_whole_level_set():
    f = F.build_independent(20)
    s = F.sample(f, 8)
    p = extract_peaks(s, PeakQuery(0.5, 1e-9, m_ref=1.0))
    assert sorted(p.indices.tolist()) == np.flatnonzero(s.values() >= 0.5).tolist()


def test_singleton_level_set():
    f = F.build_independent(5)
    s = F.FieldSample(f, np.array([3.0, 0.0, -1.0, 0.5, 0.1]))
    p = extract_peaks(s, PeakQuery(0.1, 0.1, m_ref=2.0))
    assert p.indices.tolist() == [0]


def test_witness_blocks_every_rejection():
    f = F.build_directed_polymer(3)
    s = F.sample(f, 2)
    q = PeakQuery(0.5, 0.3, m_ref=3.0, normalized=True)
    p = extract_peaks(s, q)
    rescan(f, s, p, q.threshold(), q.eps_for(f))
    assert set(p.witness) == set(np.flatnonzero(s.values() >= q.threshold()).tolist()) - set(p.indices.tolist())


ZOO = {
    "block": F.build_block(4, 12),
    "shifted": F.build_shifted(16, 1.0),
    "polymer": F.build_directed_polymer(3),
    "sk": F.build_sk(5),
    "explicit": F.build_explicit(covariance=np.array([[1, 0.4, 0.1], [0.4, 1, -0.6], [0.1, -0.6, 1.0]])),
}


@settings(max_examples=60, deadline=None)
@given(
    name=st.sampled_from(sorted(ZOO)),
    seed=st.integers(0, 2**31),
    delta=st.floats(0.05, 1.0),
    eps=st.floats(0.01, 1.0),
)
def test_peak_invariants_hold(name, seed, delta, eps):
    f = ZOO[name]
    s = F.sample(f, seed)
    q = PeakQuery(delta, eps, m_ref=0.5 * math.sqrt(f.max_variance), normalized=True)
    p = extract_peaks(s, q)
    rescan(f, s, p, q.threshold(), q.eps_for(f))
    # deterministic given the sample
    assert extract_peaks(s, q).indices.tolist() == p.indices.tolist()
    # the batch counter agrees with the per-sample extraction
    count = greedy_peak_counts(s.values()[None, :], f.covariance_matrix(), q.threshold(), q.eps_for(f))
    assert int(count[0]) == len(p)


@settings(max_examples=60, deadline=None)
@given(name=st.sampled_from(sorted(ZOO)), seed=st.integers(0, 2**31), d1=st.floats(0.05, 1.0), d2=st.floats(0.05, 1.0))
def test_deeper_query_never_shrinks_peak_set(name, seed, d1, d2):
    f = ZOO[name]
    s = F.sample(f, seed)
    lo, hi = sorted((d1, d2))
    m = 0.8 * math.sqrt(f.max_variance)
    a = extract_peaks(s, PeakQuery(lo, 0.3, m_ref=m, normalized=True))
    b = extract_peaks(s, PeakQuery(hi, 0.3, m_ref=m, normalized=True))
    assert len(b) >= len(a)


@settings(max_examples=60, deadline=None)
@given(
    name=st.sampled_from(["block", "shifted"]),
    seed=st.integers(0, 2**31),
    e1=st.floats(0.01, 1.0),
    e2=st.floats(0.01, 1.0),
)
def test_wider_eps_never_shrinks_on_equicorrelated_structures(name, seed, e1, e2):
    f = ZOO[name]
    s = F.sample(f, seed)
    lo, hi = sorted((e1, e2))
    a = extract_peaks(s, PeakQuery(0.6, lo, m_ref=0.5))
    b = extract_peaks(s, PeakQuery(0.6, hi, m_ref=0.5))
    assert len(b) >= len(a)


def test_wider_eps_can_shrink_greedy_set_in_general():
    # a star around b: |R(a,b)| = 0.2, |R(b,c)| = |R(b,d)| = 0.4, values a > b > c > d
    cov = np.eye(4)
    cov[0, 1] = cov[1, 0] = 0.2
    cov[1, 2] = cov[2, 1] = cov[1, 3] = cov[3, 1] = 0.4
    f = F.build_explicit(covariance=cov)
    order = np.arange(4)
    small, _ = greedy_maximal(f, order, 0.1)
    large, _ = greedy_maximal(f, order, 0.3)
    assert small.tolist() == [0, 2, 3]
    assert large.tolist() == [0, 1]


@settings(max_examples=40, deadline=None)
@given(K=st.sampled_from([1, 2, 4, 8]), seed=st.integers(0, 2**31), eps=st.floats(0.0001, 0.999))
def test_block_peak_count_at_most_k(K, seed, eps):
    f = F.build_block(K, 16)
    s = F.sample(f, seed)
    assert len(extract_peaks(s, PeakQuery(1.0, eps, m_ref=0.0))) <= K


def test_block_event_frequency_matches_two_to_minus_eight():
    st_ = estimate_peak_event(F.build_block(8, 16), PeakQuery(1.0, 0.5, m_ref=0.0), 8, 400_000, 3, pilot_trials=1000)
    assert abs(st_.frequency - 2**-8) <= 4 * math.sqrt(2**-8 * (1 - 2**-8) / 400_000)
    assert st_.ci[0] <= st_.frequency <= st_.ci[1]


def test_ell_one_is_certain_when_reference_below_max():
    f = F.build_shifted(32, 1.0)
    st_ = estimate_peak_event(f, PeakQuery(0.5, 0.1, m_ref=-100.0), 1, 5000, 4, pilot_trials=2000)
    assert st_.frequency == 1.0


def test_batch_and_sample_paths_agree():
    from peakfield.parallel import map_chunks

    f = F.build_sk(4)
    q = PeakQuery(0.5, 0.4, m_ref=1.0, normalized=True)
    batch = peak_sizes(f, q, 1.0, 300, 5, "t")

    def kernel(rng, size):
        return np.array([len(extract_peaks(F.FieldSample(f, d), q)) for d in f.draw_drivers(rng, size)])

    slow = np.concatenate(map_chunks(kernel, 300, 5, "t"))
    assert batch.tolist() == slow.tolist()


def test_peak_counter_estimator_shape():
    f = F.build_block(2, 4)
    X = f.values(f.draw_drivers(make_rng(1), 50))
    pc = PeakCounter(covariance=f.covariance_matrix(), delta=1.0, eps=0.5, m_ref=0.0).fit(X)
    out = pc.transform(X)
    assert out.shape[0] == 50
    assert np.all(out.ravel() == (X[:, [0, 2]] >= 0).sum(axis=1))


def test_shortest_interval_covers_more_than_three_quarters():
    x = np.random.default_rng(0).standard_normal(10_001)
    r, s = shortest_interval(x)
    assert np.mean((x >= r) & (x <= s)) > 0.75
    assert s - r == pytest.approx(2 * 1.1503, rel=0.05)


def test_lemma22_reports():
    f = F.build_block(64, 64)
    # width about 0.047 <= eps/8 gives a bound near 35 <= 64
    ok = check_lemma22_bound(f, 2.0 + np.linspace(0, 0.0625, 100), 0.5)
    assert ok["status"] == "pass" and ok["size"] == 64 and ok["bound"] < 64
    tight = check_lemma22_bound(f, 2.0 + np.linspace(0, 1e-3, 100), 0.5)
    assert tight["status"] == "fail" and tight["bound"] == math.inf
    wide = check_lemma22_bound(f, np.random.default_rng(1).standard_normal(1000), 0.5)
    assert wide["status"] == "not applicable"
    fail = check_lemma22_bound(F.build_block(2, 4), np.linspace(0, 0.0625, 100), 0.5)
    assert fail["status"] == "fail" and fail["size"] == 2


def test_corollary25_symmetry_and_bias():
    one = check_corollary25(F.orthonormal(1), 1.0, 40_000, 6, pilot_trials=2000)
    assert abs(one["frequency"] - 0.5) < 4 * one["stderr"] + 1e-3
    blk = check_corollary25(F.build_block(4, 8), 1.0, 20_000, 7, pilot_trials=2000)
    assert blk["frequency"] >= 0.5
