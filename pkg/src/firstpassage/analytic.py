"""Closed-form and numerical evaluation of the exit/entrance count laws.

Everything here is deterministic. The mean exit count is summed as a series
over Borel weights; the entrance count law is obtained either from the
alternating inversion formula or by uniformizing the pure-birth chain with
rates ``1/(n+1)``. The two routes are independent and are cross-checked in
the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from mpmath.ctx_mp import MPContext
from numba import njit
from scipy import integrate, special, stats

from .errors import DomainError, RangeError, SeriesConvergenceError, TruncationError

# Regime switches for entrance_cdf: double precision up to DOUBLE_MAX_N,
# extended precision up to MPMATH_MAX_N, uniformization beyond.
DOUBLE_MAX_N = 12
MPMATH_MAX_N = 60

DIRECT_TERMS = 100_000
STIRLING_MIN_J = 20
MGF_TAYLOR_SWITCH = 1e-6

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SeriesEval:
    value: float
    terms_used: int
    tail_bound: float


@dataclass(frozen=True)
class MomentPair:
    mean: float
    variance: float


@dataclass(frozen=True)
class DistributionTable:
    """Law of a count on ``0..n_max``; ``deficit`` is the mass not listed."""

    horizon: float
    probs: np.ndarray
    deficit: float
    truncation_error: float = 0.0

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def tail(self, n: int) -> float:
        """``P(count >= n)``, counting the unlisted mass as above ``n_max``."""
        if n <= 0:
            return 1.0
        if n > self.n_max:
            return self.deficit
        return float(self.probs[n:].sum() + self.deficit)

    def expect(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.probs, fn(np.arange(self.probs.size, dtype=float))))

    def mean(self) -> float:
        return self.expect(lambda n: n)

    def moment(self, k: int) -> float:
        return self.expect(lambda n: n**k)


# ---------------------------------------------------------------------------
# Borel weights and the mean exit count


def _log_series_weight(j: np.ndarray) -> np.ndarray:
    """``log(e^{-j} j^j / j!)`` for integer ``j >= 1``.

    Small ``j`` go through log-gamma; large ``j`` use the Stirling series,
    which avoids the cancellation between ``j log j`` and ``log j!``.
    """
    j = np.asarray(j, dtype=float)
    out = np.empty_like(j)
    small = j < STIRLING_MIN_J
    js = j[small]
    out[small] = js * np.log(js) - js - special.gammaln(js + 1.0)
    jl = j[~small]
    inv = 1.0 / jl
    inv2 = inv * inv
    out[~small] = -0.5 * np.log(2.0 * np.pi * jl) - inv * (
        1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0))
    )
    return out


def borel_pmf(j: int) -> float:
    """Borel(1) probability ``e^{-j} j^{j-1} / j!``."""
    if int(j) != j or j < 1:
        raise DomainError(f"Borel pmf needs a positive integer, got {j!r}")
    return float(np.exp(_log_series_weight(np.array([j]))[0] - math.log(j)))


@lru_cache(maxsize=8)
def _direct_weights(n_terms: int) -> tuple[np.ndarray, np.ndarray]:
    js = np.arange(1, n_terms + 1, dtype=float)
    w = np.exp(_log_series_weight(js))
    js.flags.writeable = False
    w.flags.writeable = False
    return js, w


def _stirling_log_rest(y):
    inv = 1.0 / y
    inv2 = inv * inv
    return -inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))


def _tail_sum(t: float, J: int) -> tuple[float, float]:
    """Sum of the series terms with index ``j > J`` and an error estimate.

    The summand is replaced by its Stirling approximant (relative error below
    ``J**-7``), and the sum by the integral plus Euler-Maclaurin corrections.
    """

    def summand(y):
        return math.exp(-0.5 * math.log(2 * math.pi * y) + _stirling_log_rest(y)) * -math.expm1(-t / y)

    # y = t / s^2 maps [J, inf) onto (0, sqrt(t/J)] with a bounded integrand
    scale = math.sqrt(2.0 * t / math.pi)

    def integrand(s):
        if s == 0.0:
            return scale
        s2 = s * s
        return scale * math.exp(_stirling_log_rest(t / s2)) * (-math.expm1(-s2) / s2)

    integral, abserr, info, *msg = integrate.quad(
        integrand, 0.0, math.sqrt(t / J), epsabs=0.0, epsrel=1e-13, limit=400, full_output=1
    )
    if msg:
        # quadpack flagged roundoff or slow convergence; do not trust abserr
        abserr = max(abserr, 1e-12 * abs(integral))

    fJ = summand(J)
    dlog_g = -0.5 / J + 1.0 / (12.0 * J * J) - 1.0 / (120.0 * J**4)
    h = -math.expm1(-t / J)
    dh = -(t / (J * J)) * math.exp(-t / J)
    dfJ = math.exp(-0.5 * math.log(2 * math.pi * J) + _stirling_log_rest(J)) * (dlog_g * h + dh)

    value = integral - 0.5 * fJ - dfJ / 12.0
    bound = abserr + abs(fJ) / J**3 + _EPS * abs(integral) + abs(integral) / J**7
    return value, bound


def mean_exit_count(t: float, tol: float = 1e-9, direct_terms: int = DIRECT_TERMS) -> SeriesEval:
    """Mean exit count ``E N(t)`` as a Borel-weighted series.

    ``nu(t) = sum_j e^{-j} j^j / j! * (1 - e^{-t/j})``. The first
    ``direct_terms`` terms are summed directly; the rest is an integral with
    Euler-Maclaurin corrections.

    Raises
    ------
    SeriesConvergenceError
        If the error estimate exceeds ``tol``.
    """
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    if not tol > 0:
        raise DomainError(f"tol must be > 0, got {tol!r}")
    if direct_terms < STIRLING_MIN_J:
        raise DomainError(f"direct_terms must be >= {STIRLING_MIN_J}")
    if t == 0:
        return SeriesEval(0.0, 1, 0.0)
    t = float(t)
    js, w = _direct_weights(int(direct_terms))
    terms = w * -np.expm1(-t / js)
    direct = float(terms.sum())
    tail, tail_err = _tail_sum(t, int(direct_terms))
    value = direct + tail
    bound = tail_err + 64 * _EPS * direct
    if bound > tol:
        raise SeriesConvergenceError(
            f"mean_exit_count({t}) error estimate {bound:.3g} exceeds tol {tol:.3g}", value, bound
        )
    return SeriesEval(value, int(direct_terms), bound)


def exit_variance(t: float, tol: float = 1e-9) -> float:
    """``Var N(t) = 2t - nu^2 - nu``."""
    nu = mean_exit_count(t, tol).value
    return 2.0 * t - nu * nu - nu


def mean_bounds(t: float) -> tuple[float, float]:
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t!r}")
    return math.sqrt(2 * t + 1) - 1, math.sqrt(2 * t)


# ---------------------------------------------------------------------------
# Entrance count law


def _entrance_cdf_double(n: int, t: float) -> float:
    total = 0.0
    for j in range(1, n + 1):
        sign = -1.0 if (n - j) % 2 else 1.0
        total += sign * math.comb(n, j) * float(j) ** n * -math.expm1(-t / j)
    return total / math.factorial(n)


def _entrance_cdf_mp(n: int, t: float) -> float:
    # The largest term sets the cancellation; precision is raised until the
    # rounding error is small relative to the result, not just to 1.
    log2_max = max(math.log2(math.comb(n, j)) + n * math.log2(j) for j in range(1, n + 1))
    log2_max -= math.log2(math.factorial(n))
    prec = max(int(math.ceil(1.5 * n)) + 64, int(math.ceil(log2_max)) + 64)
    for _ in range(8):
        ctx = MPContext()
        ctx.prec = prec
        tt = ctx.mpf(t)
        total = ctx.mpf(0)
        for j in range(1, n + 1):
            term = math.comb(n, j) * ctx.mpf(j) ** n * -ctx.expm1(-tt / j)
            total += -term if (n - j) % 2 else term
        p = total / ctx.factorial(n)
        if p > 0:
            lost_bits = log2_max - float(ctx.log(p, 2))
            if prec - lost_bits >= 60:
                return float(p)
            prec = int(math.ceil(log2_max - float(ctx.log(p, 2)))) + 80
        else:
            prec *= 2
    return float(p)


def entrance_cdf(n: int, t: float) -> float:
    """``P(M(t) >= n) = P(zeta_n <= t)`` for the entrance count ``M``."""
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    n = int(n)
    if t == 0:
        return 0.0
    if n <= DOUBLE_MAX_N:
        p = _entrance_cdf_double(n, t)
    elif n <= MPMATH_MAX_N:
        p = _entrance_cdf_mp(n, t)
    else:
        p = birth_distribution(t, n - 1).deficit
    return min(1.0, max(0.0, p))


# Mass below this is dropped from the edges of the support and booked as
# lost; it keeps the sweep away from subnormal arithmetic.
_DROP = 1e-40


@njit(cache=True)
def _uniformized_mix(q, m_lo, weights):
    # q[n] is the jump probability per uniformized step from state n; the
    # last state is an absorbing overflow bucket with q = 0.
    K = q.size - 1
    v = np.zeros(K + 1)
    acc = np.zeros(K + 1)
    v[0] = 1.0
    lo = 0
    hi = 0
    dropped = 0.0
    m_max = m_lo + weights.size - 1
    for m in range(m_max + 1):
        if m >= m_lo:
            w = weights[m - m_lo]
            for n in range(lo, hi + 1):
                acc[n] += w * v[n]
        if m == m_max:
            break
        new_hi = hi + 1 if hi < K else K
        for n in range(new_hi, lo, -1):
            v[n] = v[n] * (1.0 - q[n]) + v[n - 1] * q[n - 1]
        v[lo] = v[lo] * (1.0 - q[lo])
        hi = new_hi
        while lo < hi and v[lo] < _DROP:
            dropped += v[lo]
            v[lo] = 0.0
            lo += 1
        while hi > lo and v[hi] < _DROP:
            dropped += v[hi]
            v[hi] = 0.0
            hi -= 1
    return acc, dropped


def _poisson_window(mu: float, k_lo: int, k_hi: int) -> np.ndarray:
    """Poisson(mu) pmf on ``k_lo..k_hi`` without the ``k log mu`` cancellation."""
    k = np.arange(k_lo, k_hi + 1, dtype=float)
    out = np.empty_like(k)
    zero = k == 0
    out[zero] = -mu
    kk = k[~zero]
    # log(mu^k e^-mu / k!) = k log(mu/k) + k - mu - log(k!/(k^k e^-k))
    out[~zero] = kk * np.log1p((mu - kk) / kk) + (kk - mu) + _log_series_weight(kk)
    return np.exp(out)


def birth_distribution(
    t: float,
    n_max: int,
    rates: Sequence[float] | None = None,
    max_deficit: float | None = None,
) -> DistributionTable:
    """Law of a pure-birth chain at time ``t`` by uniformization.

    Parameters
    ----------
    t : float
        Time horizon, ``t >= 0``.
    n_max : int
        Largest state listed; mass above it is reported as ``deficit``.
    rates : sequence of float, optional
        Birth rates ``beta_0..beta_{n_max}``. Defaults to ``1/(n+1)``, the
        entrance count chain.
    max_deficit : float, optional
        Raise :class:`TruncationError` if the deficit exceeds this.
    """
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    if int(n_max) != n_max or n_max < 1:
        raise DomainError(f"n_max must be a positive integer, got {n_max!r}")
    n_max = int(n_max)
    if rates is None:
        beta = 1.0 / np.arange(1, n_max + 2, dtype=float)
    else:
        beta = np.asarray(rates, dtype=float)[: n_max + 1]
        if beta.size < n_max + 1 or np.any(beta <= 0) or not np.all(np.isfinite(beta)):
            raise DomainError("rates must supply n_max+1 positive finite values")
    if t == 0:
        probs = np.zeros(n_max + 1)
        probs[0] = 1.0
        return DistributionTable(0.0, probs, 0.0)

    lam = float(beta.max())
    mu = lam * t
    spread = 12.0 * math.sqrt(mu) + 20.0
    m_lo = max(0, int(math.floor(mu - spread)))
    m_max = int(math.ceil(mu + spread))
    weights = _poisson_window(mu, m_lo, m_max)
    lost = float(stats.poisson.sf(m_max, mu)) + (float(stats.poisson.cdf(m_lo - 1, mu)) if m_lo > 0 else 0.0)
    weights *= (1.0 - lost) / weights.sum()

    q = np.append(beta / lam, 0.0)
    acc, dropped = _uniformized_mix(q, m_lo, weights)
    probs = acc[: n_max + 1]
    deficit = float(acc[n_max + 1])
    if max_deficit is not None and deficit > max_deficit:
        raise TruncationError(f"deficit {deficit:.3g} exceeds cap {max_deficit:.3g}; raise n_max", deficit)
    return DistributionTable(float(t), probs, deficit, lost + float(dropped))


def default_n_max(t: float) -> int:
    """A state cut-off that leaves negligible mass above it for ``1/(n+1)`` rates."""
    r = math.sqrt(2.0 * t)
    return int(math.ceil(r + 15.0 * math.sqrt(r) + 40.0))


# ---------------------------------------------------------------------------
# Moments


def zeta_moments(n: int) -> MomentPair:
    """Mean and variance of ``zeta_n = sum_{j<=n} j * eta_j``."""
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    return MomentPair(n * (n + 1) / 2, n * (n + 1) * (2 * n + 1) / 6)


def log_waiting_time_mgf(x: float, z: float) -> float:
    """Log of ``E exp(z T(x)) = exp((e^{zx} - zx - 1) / z)``."""
    if not x >= 0:
        raise DomainError(f"x must be >= 0, got {x!r}")
    u = z * x
    if abs(u) < MGF_TAYLOR_SWITCH:
        # (e^u - u - 1)/u to third order, scaled by x
        return x * u * (0.5 + u * (1.0 / 6.0 + u / 24.0))
    if u > 709.0:
        # e^u overflows a double; its quotient by z may not
        lead = u - math.log(z)
        if lead > 709.0:
            return math.inf
        return math.exp(lead) - x - 1.0 / z
    return math.expm1(u) / z - x


def waiting_time_mgf(x: float, z: float) -> float:
    log_m = log_waiting_time_mgf(x, z)
    if log_m > 709.0:
        raise RangeError(f"MGF overflows at x={x}, z={z}", log_m)
    return math.exp(log_m)


def centered_exponential_moment(m: int) -> int:
    """``E (eta - 1)^m`` for a unit exponential ``eta``: the derangement number."""
    if int(m) != m or m < 0:
        raise DomainError(f"m must be a nonnegative integer, got {m!r}")
    prev, cur = 1, 0
    if m == 0:
        return 1
    for k in range(2, int(m) + 1):
        prev, cur = cur, (k - 1) * (cur + prev)
    return cur
