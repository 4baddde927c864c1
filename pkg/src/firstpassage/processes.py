"""Poisson paths, their functionals, and batch samplers for the counts.

Two layers live here. Per-path functions take an explicit
:class:`ArrivalSequence` and compute exit/entrance counts and the waiting
integrals ``T(x)``, ``S(x)`` on it. Batch samplers (``sample_*``) are numba
kernels drawing many independent replicates from one generator; they extend
each path lazily, so no horizon has to be guessed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainError, HorizonError, InvariantViolation
from .rng import exponentials, nb_exponential

__all__ = [
    "ArrivalSequence",
    "PathFunctionals",
    "sample_arrivals",
    "exit_count",
    "entrance_count_on_path",
    "waiting_integrals",
    "inverse_identities_check",
    "entrance_count",
    "urn_count",
    "sample_zeta",
    "sample_exit_counts",
    "sample_entrance_counts",
    "sample_urn_counts",
    "sample_zetas",
    "sample_waiting_integrals",
    "sample_integrals_at_arrivals",
    "sample_uniform_exponential_pair",
]


@dataclass(frozen=True)
class ArrivalSequence:
    """Arrival times of a unit-rate Poisson process observed on ``[0, horizon]``."""

    horizon: float
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if not self.horizon >= 0:
            raise DomainError(f"horizon must be >= 0, got {self.horizon!r}")
        if times.ndim != 1:
            raise DomainError("times must be one-dimensional")
        if times.size:
            if times[0] <= 0 or times[-1] > self.horizon:
                raise DomainError("arrival times must lie in (0, horizon]")
            if np.any(np.diff(times) <= 0):
                raise InvariantViolation("arrival times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    def count(self, x: float) -> int:
        """``Pi(x)``: number of arrivals in ``[0, x]``."""
        return int(np.searchsorted(self.times, x, side="right"))


@dataclass(frozen=True)
class PathFunctionals:
    x: float
    T: float
    S: float
    count: int

    def __post_init__(self):
        lhs = self.T
        rhs = self.x * self.count - self.S
        if abs(lhs - rhs) > 1e-12 * max(1.0, abs(lhs), self.x * self.count):
            raise InvariantViolation(f"integration by parts fails: T={lhs!r}, x*count-S={rhs!r}")


def sample_arrivals(horizon: float, rng: np.random.Generator) -> ArrivalSequence:
    """Unit-rate Poisson arrivals on ``[0, horizon]`` as cumulative exponential gaps."""
    if not horizon >= 0:
        raise DomainError(f"horizon must be >= 0, got {horizon!r}")
    if horizon == 0:
        return ArrivalSequence(0.0, np.empty(0))
    chunk = int(horizon + 4 * np.sqrt(horizon) + 16)
    parts = []
    last = 0.0
    while True:
        cs = last + np.cumsum(exponentials(rng, chunk))
        parts.append(cs)
        last = cs[-1]
        if last > horizon:
            break
    times = np.concatenate(parts)
    return ArrivalSequence(float(horizon), times[: np.searchsorted(times, horizon, side="right")])


def exit_count(arrivals: ArrivalSequence, t: float) -> int:
    """Largest ``n`` with ``pi_1 + ... + pi_n <= t`` on a realized path.

    Raises :class:`HorizonError` if the path ends before the answer is
    determined, i.e. an unobserved arrival past the horizon could still fit.
    """
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    partial = np.cumsum(arrivals.times)
    n = int(np.searchsorted(partial, t, side="right"))
    if n == partial.size:
        total = float(partial[-1]) if n else 0.0
        if not total + arrivals.horizon > t:
            raise HorizonError(f"horizon {arrivals.horizon} too short to resolve N({t})")
    return n


def _entrance_totals(times: np.ndarray) -> np.ndarray:
    # n*pi_n - (pi_1 + ... + pi_{n-1}) for n = 1..len
    n = np.arange(1, times.size + 1)
    before = np.concatenate(([0.0], np.cumsum(times)[:-1]))
    return n * times - before


def entrance_count_on_path(arrivals: ArrivalSequence, t: float) -> int:
    """``M(t) = max{n: n pi_n - (pi_1 + ... + pi_{n-1}) <= t}`` on a realized path."""
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    totals = _entrance_totals(arrivals.times)
    n = int(np.searchsorted(totals, t, side="right"))
    if n == totals.size:
        last_total = float(totals[-1]) if n else 0.0
        last_time = float(arrivals.times[-1]) if n else 0.0
        if not last_total + (n + 1) * (arrivals.horizon - last_time) > t:
            raise HorizonError(f"horizon {arrivals.horizon} too short to resolve M({t})")
    return n


def waiting_integrals(arrivals: ArrivalSequence, x: float) -> PathFunctionals:
    """``T(x) = sum pi_j`` and ``S(x) = sum (x - pi_j)`` over arrivals ``<= x``."""
    if x > arrivals.horizon:
        raise DomainError(f"x={x} exceeds the observed horizon {arrivals.horizon}")
    if not x >= 0:
        raise DomainError(f"x must be >= 0, got {x!r}")
    seen = arrivals.times[: arrivals.count(x)]
    return PathFunctionals(float(x), float(seen.sum()), float((x - seen).sum()), int(seen.size))


def inverse_identities_check(arrivals: ArrivalSequence, t: float) -> bool:
    """Check ``N(t) = Pi(X(t)) - 1`` and ``M(t) = Pi(tau(t))`` on one path.

    ``X`` is the right-continuous inverse of ``T``; ``tau`` solves
    ``S(tau) + tau = t`` on the piecewise-linear path, segment by segment.
    """
    times = arrivals.times

    # X(t): first jump of T strictly above t
    running = 0.0
    X = None
    for k, p in enumerate(times, start=1):
        running += p
        if running > t:
            X = p
            break
    if X is None:
        raise HorizonError(f"T never exceeds {t} within the horizon")
    ok_exit = arrivals.count(X) - 1 == exit_count(arrivals, t)

    # tau(t): S(x) + x has slope k+1 on [pi_k, pi_{k+1}); F holds its value at pi_k
    F = 0.0
    prev = 0.0
    k = 0
    for p in times:
        nxt = F + (k + 1) * (p - prev)
        if nxt > t:
            break
        F, prev, k = nxt, p, k + 1
    else:
        if not F + (k + 1) * (arrivals.horizon - prev) > t:
            raise HorizonError(f"S(x)+x never exceeds {t} within the horizon")
    tau = prev + (t - F) / (k + 1)
    ok_entrance = arrivals.count(tau) == entrance_count_on_path(arrivals, t)
    return bool(ok_exit and ok_entrance)


# ---------------------------------------------------------------------------
# Batch kernels


@njit(cache=True)
def _exit_counts(rng, t, size):
    out = np.empty(size, np.int64)
    for i in range(size):
        pi = 0.0
        total = 0.0
        n = 0
        while True:
            pi += nb_exponential(rng)
            total += pi
            if total > t:
                break
            n += 1
        out[i] = n
    return out


@njit(cache=True)
def _entrance_counts(rng, t, size):
    out = np.empty(size, np.int64)
    for i in range(size):
        zeta = 0.0
        n = 0
        while True:
            zeta += (n + 1) * nb_exponential(rng)
            if zeta > t:
                break
            n += 1
        out[i] = n
    return out


@njit(cache=True)
def _urn_counts(rng, t, size):
    out = np.empty(size, np.int64)
    for i in range(size):
        clock = 0.0
        white = 0
        while True:
            clock += nb_exponential(rng)
            if clock > t:
                break
            # ball 0 is the red one
            if int(rng.random() * (white + 1)) == 0:
                white += 1
        out[i] = white
    return out


@njit(cache=True)
def _zetas(rng, n, size):
    out = np.empty(size)
    for i in range(size):
        z = 0.0
        for j in range(1, n + 1):
            z += j * nb_exponential(rng)
        out[i] = z
    return out


@njit(cache=True)
def _waiting_integrals(rng, x, size):
    T = np.zeros(size)
    S = np.zeros(size)
    for i in range(size):
        pi = 0.0
        while True:
            pi += nb_exponential(rng)
            if pi > x:
                break
            T[i] += pi
            S[i] += x - pi
    return T, S


@njit(cache=True)
def _integrals_at_arrivals(rng, n, size):
    t_n = np.empty(size)
    s_next = np.empty(size)
    s_shift = np.empty(size)
    pis = np.empty(n + 1)
    for i in range(size):
        pi = 0.0
        for j in range(n + 1):
            pi += nb_exponential(rng)
            pis[j] = pi
        tot = 0.0
        for j in range(n):
            tot += pis[j]
        t_n[i] = tot
        s_next[i] = n * pis[n] - tot
        s_shift[i] = n * pis[n - 1] - tot + pis[n - 1]
    return t_n, s_next, s_shift


@njit(cache=True)
def _uniform_exponential_pair(rng, n, size):
    left = np.empty(size)
    right = np.empty(size)
    for i in range(size):
        g = 0.0
        for j in range(n + 1):
            g += nb_exponential(rng)
        u = 0.0
        for j in range(n):
            u += rng.random()
        left[i] = g * u
        g = 0.0
        for j in range(n):
            g += nb_exponential(rng)
        u = 1.0
        for j in range(n - 1):
            u += rng.random()
        right[i] = g * u
    return left, right


def _check_t(t):
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    return float(t)


def _check_n(n):
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    return int(n)


def sample_exit_counts(t: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Independent draws of the exit count ``N(t)``."""
    return _exit_counts(rng, _check_t(t), int(size))


def sample_entrance_counts(t: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Independent draws of ``M(t)`` from the jump times ``zeta_n = sum j eta_j``."""
    return _entrance_counts(rng, _check_t(t), int(size))


def sample_urn_counts(t: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """White-ball counts at time ``t`` of the one-red-ball urn."""
    return _urn_counts(rng, _check_t(t), int(size))


def sample_zetas(n: int, rng: np.random.Generator, size: int) -> np.ndarray:
    return _zetas(rng, _check_n(n), int(size))


def sample_waiting_integrals(x: float, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Paired draws of ``(T(x), S(x))`` from the same paths."""
    return _waiting_integrals(rng, _check_t(x), int(size))


def sample_integrals_at_arrivals(n: int, rng: np.random.Generator, size: int):
    """Draws of ``T(pi_n)``, ``S(pi_{n+1})`` and ``S(pi_n) + pi_n`` (same paths)."""
    return _integrals_at_arrivals(rng, _check_n(n), int(size))


def sample_uniform_exponential_pair(n: int, rng: np.random.Generator, size: int):
    """Independent draws of ``pi_{n+1}(u_1+...+u_n)`` and ``pi_n(1+u_1+...+u_{n-1})``."""
    return _uniform_exponential_pair(rng, _check_n(n), int(size))


def entrance_count(t: float, rng: np.random.Generator) -> int:
    return int(sample_entrance_counts(t, rng, 1)[0])


def urn_count(t: float, rng: np.random.Generator) -> int:
    return int(sample_urn_counts(t, rng, 1)[0])


def sample_zeta(n: int, rng: np.random.Generator) -> float:
    return float(sample_zetas(n, rng, 1)[0])


def sample_exit_count(t: float, rng: np.random.Generator) -> int:
    return int(sample_exit_counts(t, rng, 1)[0])
