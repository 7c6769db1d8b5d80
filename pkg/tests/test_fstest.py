import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import random_two_sample
from hdbf.errors import DegenerateCoordinateError, NonPositiveVarianceError, TooFewObservationsError
from hdbf.fstest import (
    Sample,
    TraceEstimates,
    TwoSample,
    build_moment_cache,
    compute_tn,
    compute_tn_oracle,
    cross_trace_hat,
    decide,
    fs_components,
    loo_variance,
    run_fs_test,
    term_denominator,
    trace_sq_hat,
    variance_hat,
)


def rel_close(a, b, tol):
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


# --- samples and moment caches -------------------------------------------------


def test_sample_rejects_nonfinite():
    with pytest.raises(ValueError):
        Sample([[1.0, np.nan]])


def test_two_sample_dimension_mismatch():
    with pytest.raises(ValueError):
        TwoSample.from_arrays(np.ones((4, 2)), np.ones((4, 3)))


def test_gamma_is_size_ratio():
    ts = TwoSample.from_arrays(np.zeros((6, 2)), np.zeros((4, 2)))
    assert ts.gamma == 6 / 4


def test_cache_zero_column():
    cache = build_moment_cache(Sample(np.zeros((3, 1))))
    assert cache.col_sum[0] == 0 and cache.col_sumsq[0] == 0


def test_cache_hand_arithmetic():
    cache = build_moment_cache(Sample([[1.0], [2.0], [3.0]]))
    assert cache.col_sum[0] == 6 and cache.col_sumsq[0] == 14


def test_cache_matches_direct_loops(rng):
    x = rng.normal(size=(6, 5))
    cache = build_moment_cache(Sample(x))
    for k in range(5):
        s = ss = 0.0
        for l in range(6):
            s += x[l, k]
            ss += x[l, k] ** 2
        assert cache.col_sum[k] == s
        assert cache.col_sumsq[k] == ss


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_cache_cauchy_schwarz_and_rebuild(x):
    smp = Sample(x)
    cache = build_moment_cache(smp)
    tol = 1e-9 * (1 + cache.col_sumsq)
    assert np.all(cache.col_sumsq + tol >= cache.col_sum**2 / smp.n)
    again = build_moment_cache(smp)
    assert np.array_equal(cache.col_sum, again.col_sum)
    assert np.array_equal(cache.col_sumsq, again.col_sumsq)


# --- leave-k-out variances -----------------------------------------------------


def test_loo_two_point_variance():
    smp = Sample([[1.0], [2.0], [3.0], [4.0]])
    assert loo_variance(build_moment_cache(smp), smp, 0, (0, 1)) == 0.5


def test_loo_constant_column_is_zero():
    smp = Sample(np.full((6, 1), 3.0))
    cache = build_moment_cache(smp)
    for pair in [(0, 1), (2, 5), (3, 4)]:
        assert loo_variance(cache, smp, 0, pair) == 0.0


def test_loo_matches_naive(rng):
    x = rng.normal(size=(10, 1)) * 4 + 2
    smp = Sample(x)
    drop = (1, 4, 7, 9)
    kept = [x[l, 0] for l in range(10) if l not in drop]
    assert rel_close(loo_variance(build_moment_cache(smp), smp, 0, drop), statistics.variance(kept), 1e-12)


def test_loo_too_few_retained():
    smp = Sample(np.arange(5.0)[:, None])
    with pytest.raises(TooFewObservationsError):
        loo_variance(build_moment_cache(smp), smp, 0, (0, 1, 2, 3))


# --- the statistic ---------------------------------------------------------------


def test_constant_column_is_degenerate():
    x = np.random.default_rng(1).normal(size=(6, 3))
    x[:, 1] = 2.5
    ts = TwoSample.from_arrays(x, x)
    with pytest.raises(DegenerateCoordinateError) as exc:
        compute_tn(ts)
    assert exc.value.location["k"] == 1
    assert set(exc.value.location) == {"k", "i", "j", "s", "t"}
    with pytest.raises(DegenerateCoordinateError):
        compute_tn_oracle(ts)


def test_tn_needs_four_per_group():
    with pytest.raises(TooFewObservationsError):
        compute_tn(TwoSample.from_arrays(np.eye(3), np.eye(3)))


def test_tn_matches_oracle_six_by_four(rng):
    ts = random_two_sample(rng, 6, 6, 4)
    assert rel_close(compute_tn(ts), compute_tn_oracle(ts), 1e-10)


def test_tn_one_coordinate_identical_samples():
    col = np.array([[1.0], [2.0], [3.0], [4.0]])
    ts = TwoSample.from_arrays(col, col)
    assert rel_close(compute_tn(ts), compute_tn_oracle(ts), 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 8), st.integers(4, 8), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_tn_oracle_equivalence(n1, n2, p, seed):
    ts = random_two_sample(np.random.default_rng(seed), n1, n2, p, loc=3.0)
    assert rel_close(compute_tn(ts), compute_tn_oracle(ts), 1e-10)


def test_oracle_scale_and_shift_invariance(rng):
    ts = random_two_sample(rng, 5, 6, 3)
    base = compute_tn_oracle(ts)
    scaled = TwoSample.from_arrays(7 * ts.sample1.data, 7 * ts.sample2.data)
    assert rel_close(compute_tn_oracle(scaled), base, 1e-12)
    c = np.array([10.0, -3.0, 250.0])
    shifted = TwoSample.from_arrays(ts.sample1.data + c, ts.sample2.data + c)
    assert rel_close(compute_tn_oracle(shifted), base, 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 12), st.integers(4, 12), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_tn_scale_invariance(n1, n2, p, seed):
    rng = np.random.default_rng(seed)
    ts = random_two_sample(rng, n1, n2, p)
    d = np.exp(rng.uniform(-4, 4, size=p))
    scaled = TwoSample.from_arrays(ts.sample1.data * d, ts.sample2.data * d)
    assert rel_close(compute_tn(scaled), compute_tn(ts), 1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 12), st.integers(4, 12), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_tn_shift_invariance(n1, n2, p, seed):
    rng = np.random.default_rng(seed)
    ts = random_two_sample(rng, n1, n2, p)
    c = rng.uniform(-100, 100, size=p)
    shifted = TwoSample.from_arrays(ts.sample1.data + c, ts.sample2.data + c)
    assert rel_close(compute_tn(shifted), compute_tn(ts), 1e-10)


def test_denominator_ignores_its_numerator_entries(rng):
    ts = random_two_sample(rng, 7, 6, 3)
    for k, i, j, s, t in [(0, 0, 1, 0, 1), (2, 6, 3, 5, 2), (1, 4, 2, 1, 3)]:
        before = term_denominator(ts, k, i, j, s, t)
        x1, x2 = ts.sample1.data.copy(), ts.sample2.data.copy()
        x1[i, k] += 2.0
        x1[j, k] -= 5.0
        x2[s, k] *= -3.0
        x2[t, k] += 8.0
        after = term_denominator(TwoSample.from_arrays(x1, x2), k, i, j, s, t)
        # Cache sums add then remove the perturbed entries, so equality is up to rounding.
        assert rel_close(after, before, 1e-12)


def test_term_denominator_matches_naive(rng):
    ts = random_two_sample(rng, 7, 6, 2)
    x1, x2 = ts.sample1.data, ts.sample2.data
    naive = (statistics.variance([x1[l, 1] for l in range(7) if l not in (2, 5)])
             + ts.gamma * statistics.variance([x2[l, 1] for l in range(6) if l not in (0, 4)]))
    assert rel_close(term_denominator(ts, 1, 2, 5, 0, 4), naive, 1e-12)


def test_identity_mode_is_cq_expansion(rng):
    for _ in range(10):
        ts = random_two_sample(rng, int(rng.integers(2, 8)), int(rng.integers(2, 8)), int(rng.integers(1, 8)), loc=1.0)
        expected = oracles.cq_expansion(ts.sample1.data, ts.sample2.data)
        assert rel_close(compute_tn(ts, "identity"), expected, 1e-10)
        assert rel_close(compute_tn_oracle(ts, "identity"), expected, 1e-10)


def test_null_mean_zero_small_scale():
    # Two groups with very different scales and a large common location.
    rng = np.random.default_rng(2024)
    p, reps = 20, 600
    sd1, sd2 = rng.uniform(0.5, 1.5, p), rng.uniform(1.0, 4.0, p)
    mu = rng.uniform(0, 50, p)
    vals = np.array([
        compute_tn(TwoSample.from_arrays(mu + sd1 * rng.normal(size=(8, p)), mu + sd2 * rng.normal(size=(8, p))))
        for _ in range(reps)
    ])
    # 0.15 is about 3.7 standard errors of the mean/sd ratio at 600 replications.
    assert abs(vals.mean() / vals.std(ddof=1)) < 0.15


# --- trace estimators ------------------------------------------------------------


@pytest.mark.parametrize("mode", ["studentized", "identity"])
@pytest.mark.parametrize("which", [1, 2])
def test_trace_sq_matches_literal_loop(rng, mode, which):
    ts = random_two_sample(rng, 7, 6, 3)
    this, other = (ts.sample1, ts.sample2) if which == 1 else (ts.sample2, ts.sample1)
    expected = oracles.trace_sq(this.data, other.data, which, studentized=(mode == "studentized"))
    assert rel_close(trace_sq_hat(ts, which, mode), expected, 1e-10)


@pytest.mark.parametrize("mode", ["studentized", "identity"])
def test_cross_trace_matches_literal_loop(rng, mode):
    ts = random_two_sample(rng, 5, 6, 3)
    expected = oracles.cross_trace(ts.sample1.data, ts.sample2.data, studentized=(mode == "studentized"))
    assert rel_close(cross_trace_hat(ts, mode), expected, 1e-10)


def test_trace_sq_needs_six():
    ts = TwoSample.from_arrays(np.random.default_rng(0).normal(size=(5, 3)), np.random.default_rng(1).normal(size=(8, 3)))
    with pytest.raises(TooFewObservationsError):
        trace_sq_hat(ts, 1)


def test_cross_trace_degenerate_coordinate(rng):
    x1 = rng.normal(size=(6, 4))
    x2 = rng.normal(size=(6, 4))
    x1[:, 2] = 1.0
    x2[:, 2] = -4.0
    with pytest.raises(DegenerateCoordinateError) as exc:
        cross_trace_hat(TwoSample.from_arrays(x1, x2))
    assert exc.value.location["k"] == 2


def test_trace_sq_degenerate_coordinate(rng):
    x1 = rng.normal(size=(7, 3))
    x2 = rng.normal(size=(7, 3))
    x1[:, 0] = 0.0
    x2[:, 0] = 0.0
    with pytest.raises(DegenerateCoordinateError):
        trace_sq_hat(TwoSample.from_arrays(x1, x2), 1)


def _mc_traces(mode, reps=500, n=30, p=10, seed=77):
    rng = np.random.default_rng(seed)
    out = np.zeros((reps, 3))
    for r in range(reps):
        ts = TwoSample.from_arrays(rng.normal(size=(n, p)), rng.normal(size=(n, p)))
        out[r] = trace_sq_hat(ts, 1, mode), trace_sq_hat(ts, 2, mode), cross_trace_hat(ts, mode)
    return out.mean(axis=0)


@pytest.mark.slow
def test_traces_identity_mode_unit_covariance():
    # Sigma = I_10: tr(Sigma^2) = tr(Sigma1 Sigma2) = 10.
    means = _mc_traces("identity")
    assert np.all(np.abs(means / 10.0 - 1) < 0.2)


@pytest.mark.slow
def test_traces_studentized_unit_covariance():
    # Sigma1 = Sigma2 = I, gamma = 1: L = 2^{-1/2} I, so every target is p / 4.
    means = _mc_traces("studentized")
    assert np.all(np.abs(means / 2.5 - 1) < 0.2)


# --- variance and decision ---------------------------------------------------------


def test_variance_hat_zero():
    assert variance_hat(TraceEstimates(0.0, 0.0, 0.0), 15, 15) == 0.0


def test_variance_hat_hand_value():
    assert variance_hat(TraceEstimates(210.0, 210.0, 225.0), 15, 15) == 8.0


def test_variance_hat_reevaluation(rng):
    for _ in range(20):
        t1, t2, t12 = rng.uniform(0, 100, 3)
        n1, n2 = rng.integers(2, 40, 2)
        expected = 2 * t1 / (n1 * (n1 - 1)) + 2 * t2 / (n2 * (n2 - 1)) + 4 * t12 / (n1 * n2)
        assert variance_hat(TraceEstimates(t1, t2, t12), int(n1), int(n2)) == expected


def test_decide_at_zero():
    res = decide(0.0, 4.0, 0.05)
    assert res.z == 0.0 and res.p_value == 0.5 and not res.reject


def test_decide_at_upper_five_percent():
    res = decide(1.6449, 1.0, 0.05)
    assert abs(res.p_value - 0.05) < 1e-3


@pytest.mark.parametrize("z", [-2.0, 0.3, 1.64, 1.65, 2.33, 5.0])
@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.1])
def test_reject_iff_p_below_alpha(z, alpha):
    res = decide(z * 3.0, 9.0, alpha)
    assert res.reject == (res.p_value < alpha)
    assert 0 <= res.p_value <= 1


@pytest.mark.parametrize("v", [0.0, -1.0, math.nan])
def test_nonpositive_variance_is_surfaced(v):
    with pytest.raises(NonPositiveVarianceError):
        decide(1.0, v, 0.05)


def test_run_fs_test_consistent_with_components(rng):
    ts = random_two_sample(rng, 9, 8, 12)
    res = run_fs_test(ts, 0.05)
    tn, traces = fs_components(ts)
    assert res.statistic == tn
    assert res.variance_hat == variance_hat(traces, 9, 8)
    assert rel_close(res.z, tn / math.sqrt(res.variance_hat), 1e-14)
    assert rel_close(tn, compute_tn(ts), 1e-12)
    assert rel_close(traces.tr12, cross_trace_hat(ts), 1e-12)
