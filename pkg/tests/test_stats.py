from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firstpassage import analytic
from firstpassage.errors import DomainError, MonteCarloError
from firstpassage.processes import sample_entrance_counts, sample_exit_counts
from firstpassage.rng import RngStream, exponentials, open_uniform
from firstpassage.stats import (
    SummaryStats,
    _Moments,
    _tree_merge,
    chi_square_counts,
    chi_square_gof,
    ks_two_sample,
    ks_uniform,
    lag1_correlation_z,
    mc_estimate,
    mc_sample,
    per_replica,
    tail_bound_check,
    variance_se,
)

ALPHA = 1e-3


class ConstKernel:
    def __call__(self, rng, size):
        return np.full(size, 2.5)


class ExitKernel:
    def __init__(self, t):
        self.t = t

    def __call__(self, rng, size):
        return sample_exit_counts(self.t, rng, size)


class NormalKernel:
    def __call__(self, rng, size):
        return rng.standard_normal(size) * 3 + 1e6


class ExpKernel:
    def __call__(self, rng, size):
        return exponentials(rng, size) + 10.0


class FailingKernel:
    def __call__(self, rng, size):
        raise ValueError("boom")


def _draw(rng):
    return float(rng.random())


# --- rng --------------------------------------------------------------------


def test_stream_is_reproducible():
    a = RngStream(5, 3).generator(block=2).random(10)
    b = RngStream(5, 3).generator(block=2).random(10)
    assert np.array_equal(a, b)


def test_streams_and_blocks_differ():
    base = RngStream(5).generator().random(1000)
    assert not np.array_equal(base, RngStream(5, 1).generator().random(1000))
    assert not np.array_equal(base, RngStream(6).generator().random(1000))
    assert not np.array_equal(base, RngStream(5).generator(block=1).random(1000))


def test_child_streams():
    s = RngStream(1)
    assert s.child("a") == s.child("a")
    assert s.child("a") != s.child("b")
    assert s.child(3).seed == 1


def test_open_uniform_and_exponentials():
    g = RngStream(2).generator()
    u = open_uniform(g, 10_000)
    assert np.all((u > 0) & (u < 1))
    e = exponentials(g, 200_000)
    assert np.all(np.isfinite(e)) and abs(e.mean() - 1) < 0.01


def test_stream_rejects_bad_seed():
    with pytest.raises(ValueError):
        RngStream(-1)


# --- harness ----------------------------------------------------------------


def test_constant_kernel():
    s = mc_estimate(ConstKernel(), 1000, RngStream(1))
    assert s.mean == 2.5 and s.variance == 0.0 and s.se == 0.0


def test_workers_do_not_change_result():
    a = mc_estimate(ExitKernel(50.0), 100_000, RngStream(7), workers=1, block_size=8192)
    b = mc_estimate(ExitKernel(50.0), 100_000, RngStream(7), workers=2, block_size=8192)
    c = mc_estimate(ExitKernel(50.0), 100_000, RngStream(7), workers=3, block_size=8192)
    assert a == b == c
    xa = mc_sample(ExitKernel(50.0), 50_000, RngStream(7), workers=1, block_size=8192)
    xb = mc_sample(ExitKernel(50.0), 50_000, RngStream(7), workers=2, block_size=8192)
    assert np.array_equal(xa, xb)


def test_exit_mean_at_hundred():
    s = mc_estimate(ExitKernel(100.0), 1_000_000, RngStream(11))
    assert abs(s.mean - analytic.mean_exit_count(100.0).value) <= 3 * s.se


def _two_pass(x):
    mean = x.mean()
    d = x - mean
    m2 = (d**2).mean()
    return mean, d @ d / (x.size - 1), (d**3).mean() / m2**1.5, (d**4).mean() / m2**2 - 3


def test_streaming_moments_match_two_pass():
    # large offset: mean and variance must survive the cancellation
    x = mc_sample(NormalKernel(), 300_000, RngStream(3), block_size=4096)
    s = mc_estimate(NormalKernel(), 300_000, RngStream(3), block_size=4096)
    mean, var, _, _ = _two_pass(x)
    assert s.mean == pytest.approx(mean, rel=1e-12)
    assert s.variance == pytest.approx(var, rel=1e-12)

    x = mc_sample(ExpKernel(), 300_000, RngStream(3), block_size=4096)
    s = mc_estimate(ExpKernel(), 300_000, RngStream(3), block_size=4096)
    for got, want in zip((s.mean, s.variance, s.skewness, s.excess_kurtosis), _two_pass(x)):
        assert got == pytest.approx(want, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=60), st.integers(1, 5))
def test_merge_matches_direct(values, cuts):
    x = np.array(values)
    parts = [_Moments.from_array(p) for p in np.array_split(x, cuts)]
    merged = _tree_merge(parts)
    direct = _Moments.from_array(x)
    assert merged.n == direct.n
    assert merged.mean == pytest.approx(direct.mean, rel=1e-9, abs=1e-9)
    assert merged.m2 == pytest.approx(direct.m2, rel=1e-8, abs=1e-6)


def test_kernel_failure_names_seed_and_replicas():
    with pytest.raises(MonteCarloError) as info:
        mc_estimate(FailingKernel(), 10, RngStream(42, 9))
    err = info.value
    assert err.seed == 42 and err.stream_id == 9
    assert err.first_replica == 0 and err.last_replica == 9


def test_reps_domain():
    with pytest.raises(DomainError):
        mc_estimate(ConstKernel(), 1, RngStream(1))


def test_per_replica_adapter():
    s = mc_estimate(per_replica(_draw), 2000, RngStream(4))
    assert abs(s.mean - 0.5) < 4 * math.sqrt(1 / 12 / 2000)


def test_summary_invariants():
    s = SummaryStats.from_samples([1.0, 2.0, 4.0, 8.0])
    assert s.se == pytest.approx(math.sqrt(s.variance / s.n))
    assert s.variance >= 0
    assert set(s.as_dict()) == {"n", "mean", "variance", "se", "skewness", "excess_kurtosis"}


def test_variance_se_normal():
    s = SummaryStats.from_samples(np.random.default_rng(0).standard_normal(100_000))
    assert variance_se(s) == pytest.approx(math.sqrt(2 / 1e5), rel=0.05)


# --- tests ------------------------------------------------------------------


def test_ks_identical_and_disjoint():
    a = np.linspace(0, 1, 50)
    assert ks_two_sample(a, a).statistic == 0.0
    assert ks_two_sample(a, a + 2).statistic == 1.0


def test_ks_uniform_samples():
    g = RngStream(8).generator()
    res = ks_two_sample(g.random(10_000), g.random(10_000))
    assert res.statistic < 0.05 and not res.rejects(ALPHA)
    assert not res.discrete
    assert ks_two_sample([1, 1, 2], [1, 2, 2]).discrete


def test_ks_uniform_one_sample():
    g = RngStream(9).generator()
    assert not ks_uniform(g.random(50_000)).rejects(ALPHA)
    assert ks_uniform(g.random(50_000) ** 1.1).rejects(ALPHA)


def test_chi_square_proportional_is_zero():
    res = chi_square_gof([10, 20, 70], [0.1, 0.2, 0.7])
    assert res.statistic == pytest.approx(0.0, abs=1e-12) and res.dof == 2


def test_chi_square_entrance_law():
    m = sample_entrance_counts(25.0, RngStream(10).generator(), 100_000)
    law = analytic.birth_distribution(25.0, analytic.default_n_max(25.0)).probs
    assert not chi_square_counts(m, law).rejects(ALPHA)


def test_chi_square_detects_wrong_law():
    m = sample_entrance_counts(25.0, RngStream(10).generator(), 100_000)
    law = analytic.birth_distribution(27.0, analytic.default_n_max(27.0)).probs
    assert chi_square_counts(m, law).rejects(ALPHA)


def test_chi_square_single_bin_is_error():
    with pytest.raises(DomainError):
        chi_square_gof([100], [1.0])


def test_lag1_correlation():
    g = RngStream(12).generator()
    assert abs(lag1_correlation_z([g.random(1000) for _ in range(200)])) < 3.3
    walk = np.cumsum(g.random(5000)) % 1.0
    assert abs(lag1_correlation_z([np.sort(walk)])) > 10


def test_tail_bound_examples():
    rows = tail_bound_check(50, 1_000_000, [0.0, 1.0, 5.0, 10.0], RngStream(13))
    assert rows[0].bound == 3.0 and rows[0].ok
    last = rows[-1]
    assert last.bound == pytest.approx(3 * math.exp(-2.5)) and last.bound == pytest.approx(0.2463, abs=1e-4)
    assert last.ok and last.margin > 0.2
    emp = [r.empirical for r in rows]
    assert all(b <= a for a, b in zip(emp, emp[1:]))


def test_tail_bound_domain():
    with pytest.raises(DomainError):
        tail_bound_check(0, 10, [1.0], RngStream(1))
    with pytest.raises(DomainError):
        tail_bound_check(5, 10, [-1.0], RngStream(1))
