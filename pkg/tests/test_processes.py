from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from firstpassage import analytic
from firstpassage.errors import DomainError, HorizonError, InvariantViolation
from firstpassage.processes import (
    ArrivalSequence,
    PathFunctionals,
    entrance_count,
    entrance_count_on_path,
    exit_count,
    inverse_identities_check,
    sample_arrivals,
    sample_entrance_counts,
    sample_exit_counts,
    sample_integrals_at_arrivals,
    sample_uniform_exponential_pair,
    sample_urn_counts,
    sample_waiting_integrals,
    sample_zeta,
    sample_zetas,
    urn_count,
    waiting_integrals,
)
from firstpassage.rng import RngStream
from firstpassage.stats import chi_square_counts, ks_two_sample

ALPHA = 1e-3


def gen(seed, stream=0):
    return RngStream(seed, stream).generator()


# --- paths ------------------------------------------------------------------


def test_sample_arrivals_empty_at_zero():
    assert len(sample_arrivals(0.0, gen(1))) == 0


def test_sample_arrivals_count_mean():
    g = gen(2)
    counts = np.array([len(sample_arrivals(50.0, g)) for _ in range(100_000)])
    assert abs(counts.mean() - 50) <= 3 * math.sqrt(50 / counts.size)


def test_sample_arrivals_replay():
    a = sample_arrivals(30.0, gen(9))
    b = sample_arrivals(30.0, gen(9))
    assert np.array_equal(a.times, b.times)
    assert a.times[-1] <= 30.0


def test_arrival_sequence_validation():
    with pytest.raises(InvariantViolation):
        ArrivalSequence(5.0, np.array([1.0, 1.0]))
    with pytest.raises(DomainError):
        ArrivalSequence(1.0, np.array([0.5, 2.0]))
    with pytest.raises(DomainError):
        ArrivalSequence(-1.0, np.array([]))


def test_exit_count_hand_example():
    arr = ArrivalSequence(5.0, np.array([0.5, 0.7, 1.2]))
    assert exit_count(arr, 1.5) == 2
    assert exit_count(arr, 0.3) == 0


def test_exit_count_needs_horizon():
    arr = ArrivalSequence(1.3, np.array([0.5, 0.7, 1.2]))
    with pytest.raises(HorizonError):
        exit_count(arr, 10.0)


def test_entrance_count_on_path_hand_example():
    # totals n*pi_n - sum_{j<n} pi_j: 0.5, 0.9, 2.4
    arr = ArrivalSequence(5.0, np.array([0.5, 0.7, 1.2]))
    assert entrance_count_on_path(arr, 1.0) == 2
    assert entrance_count_on_path(arr, 2.4) == 3


def test_waiting_integrals_examples():
    arr = ArrivalSequence(5.0, np.array([1.0, 3.0]))
    pf = waiting_integrals(arr, 4.0)
    assert (pf.T, pf.S, pf.count) == (4.0, 4.0, 2)
    empty = waiting_integrals(arr, 0.5)
    assert (empty.T, empty.S, empty.count) == (0.0, 0.0, 0)
    with pytest.raises(DomainError):
        waiting_integrals(arr, 6.0)


def test_path_functionals_checks_identity():
    with pytest.raises(InvariantViolation):
        PathFunctionals(4.0, 4.0, 3.0, 2)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32), x=st.floats(0.0, 40.0))
def test_integration_by_parts_on_random_paths(seed, x):
    arr = sample_arrivals(40.0, gen(seed))
    pf = waiting_integrals(arr, x)
    assert abs(pf.T - (x * pf.count - pf.S)) <= 1e-12 * max(1.0, x * pf.count)


def test_inverse_identities_hand_example():
    arr = ArrivalSequence(5.0, np.array([0.5, 0.7, 1.2]))
    assert inverse_identities_check(arr, 1.5)
    assert inverse_identities_check(arr, 0.0)


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32), t=st.floats(0.0, 200.0))
def test_inverse_identities_on_random_paths(seed, t):
    arr = sample_arrivals(2 * math.sqrt(2 * t) + 40, gen(seed))
    assert inverse_identities_check(arr, t)


def test_exit_count_equals_batch_sampler_in_law():
    g = gen(3)
    per_path = np.array([exit_count(sample_arrivals(60.0, g), 100.0) for _ in range(20_000)])
    batch = sample_exit_counts(100.0, gen(4), 20_000)
    assert not ks_two_sample(per_path, batch).rejects(ALPHA)


# --- counts -----------------------------------------------------------------


def test_counts_at_zero():
    assert entrance_count(0.0, gen(1)) == 0
    assert urn_count(0.0, gen(1)) == 0
    assert np.all(sample_exit_counts(0.0, gen(1), 10) == 0)


def test_entrance_count_first_jump():
    m = sample_entrance_counts(1.0, gen(5), 100_000)
    p = -math.expm1(-1.0)
    assert abs((m >= 1).mean() - p) <= 3 * math.sqrt(p * (1 - p) / m.size)


def test_entrance_law_at_25():
    m = sample_entrance_counts(25.0, gen(6), 100_000)
    law = analytic.birth_distribution(25.0, analytic.default_n_max(25.0)).probs
    assert not chi_square_counts(m, law).rejects(ALPHA)


@pytest.mark.parametrize("t", [1.0, 5.0, 25.0])
def test_exit_entrance_duality(t):
    n = sample_exit_counts(t, gen(7, 1), 100_000)
    m = sample_entrance_counts(t, gen(7, 2), 100_000)
    assert not ks_two_sample(n, m).rejects(ALPHA)


def test_exit_mean_matches_series():
    n = sample_exit_counts(100.0, gen(8), 200_000)
    nu = analytic.mean_exit_count(100.0).value
    assert abs(n.mean() - nu) <= 3 * n.std(ddof=1) / math.sqrt(n.size)


def test_urn_law_equals_entrance_law():
    u = sample_urn_counts(10.0, gen(10, 1), 100_000)
    m = sample_entrance_counts(10.0, gen(10, 2), 100_000)
    assert not ks_two_sample(u, m).rejects(ALPHA)


def test_urn_first_addition_is_exponential():
    # the first draw always finds the red ball alone
    for t in (0.5, 2.0):
        u = sample_urn_counts(t, gen(11), 100_000)
        p = -math.expm1(-t)
        assert abs((u >= 1).mean() - p) <= 3 * math.sqrt(p * (1 - p) / u.size)


# --- zeta and integrals -----------------------------------------------------


def test_zeta_one_is_exponential():
    z = sample_zetas(1, gen(12), 100_000)
    assert stats.kstest(z, "expon").pvalue >= ALPHA


def test_zeta_ten_moments():
    z = sample_zetas(10, gen(13), 200_000)
    se_mean = math.sqrt(385 / z.size)
    assert abs(z.mean() - 55) <= 3 * se_mean
    assert abs(z.var(ddof=1) - 385) <= 3 * 385 * math.sqrt((stats.kurtosis(z) + 2) / z.size)


def test_zeta_two_cdf():
    z = sample_zetas(2, gen(14), 200_000)
    p = 1 - 2 * math.exp(-1) + math.exp(-2)
    assert abs((z <= 2).mean() - p) <= 3 * math.sqrt(p * (1 - p) / z.size)


def test_sample_zeta_scalar():
    assert sample_zeta(3, gen(1)) > 0
    with pytest.raises(DomainError):
        sample_zeta(0, gen(1))


@pytest.mark.parametrize("x", [2.0, 10.0])
def test_T_equals_S_in_law(x):
    T, _ = sample_waiting_integrals(x, gen(15, 1), 100_000)
    _, S = sample_waiting_integrals(x, gen(15, 2), 100_000)
    assert not ks_two_sample(T, S).rejects(ALPHA)


def test_T_moments_at_ten():
    T, _ = sample_waiting_integrals(10.0, gen(16), 1_000_000)
    assert abs(T.mean() - 50) <= 3 * T.std(ddof=1) / math.sqrt(T.size)
    v = T.var(ddof=1)
    assert abs(v - 1000 / 3) <= 3 * v * math.sqrt((stats.kurtosis(T) + 2) / T.size)


def test_T_mass_at_zero():
    T, _ = sample_waiting_integrals(3.0, gen(17), 1_000_000)
    p = math.exp(-3)
    assert abs((T == 0).mean() - p) <= 3 * math.sqrt(p * (1 - p) / T.size)


@pytest.mark.parametrize("n", [3, 10])
def test_integrals_at_arrival_times(n):
    a = sample_integrals_at_arrivals(n, gen(18, 1), 100_000)
    b = sample_integrals_at_arrivals(n, gen(18, 2), 100_000)
    assert not ks_two_sample(a[0], b[1]).rejects(ALPHA)
    assert not ks_two_sample(a[1], b[2]).rejects(ALPHA)


def test_integrals_at_arrivals_against_paths():
    # the batch kernel and per-path functionals agree on the same arrivals
    g = gen(19)
    arr = sample_arrivals(60.0, g)
    n = 5
    times = arr.times
    T_n = waiting_integrals(arr, times[n - 1]).T
    S_next = waiting_integrals(arr, times[n]).S
    S_n = waiting_integrals(arr, times[n - 1]).S
    assert S_next == pytest.approx(n * times[n] - T_n)
    assert S_n + times[n - 1] == pytest.approx(n * times[n - 1] - T_n + times[n - 1])


def test_uniform_exponential_pair():
    left, right = sample_uniform_exponential_pair(5, gen(20), 100_000)
    assert not ks_two_sample(left, right).rejects(ALPHA)


def test_sampler_domains():
    with pytest.raises(DomainError):
        sample_exit_counts(-1.0, gen(1), 3)
    with pytest.raises(DomainError):
        sample_zetas(0, gen(1), 3)
