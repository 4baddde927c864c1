"""Online and offline selection from a planar Poisson sample.

A sample is a unit-rate Poisson scatter on ``[0, t] x [0, 1]``: a mark
``xi`` arriving at time ``tau``. Online policies are driven by a control
``psi`` bounding the relative size of the acceptance window:

* i-policy (increasing marks): with last selection ``x``, accept when
  ``0 < (xi - x) / (1 - x) <= psi((t - tau) (1 - x))``;
* b-policy (sum at most 1): with running total ``x``, accept when
  ``0 < xi / (1 - x) <= psi((t - tau) (1 - x))``.

``run_i_policy``/``run_b_policy`` scan a realized sample point by point.
``sample_online_counts`` draws the selection count directly from the
embedded chain of acceptances, which only costs ``O(sqrt(t))`` per draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DomainError, InvariantViolation
from .processes import sample_arrivals
from .rng import nb_exponential, nb_open_uniform

# psi*(z) = sqrt(2/z) - 1/(3z) first reaches 1 (coming down from infinity) at
# OPTIMAL_Z0; the control is held at 1 below it.
_S0 = 1.5 * (math.sqrt(2.0) - math.sqrt(2.0 / 3.0))
OPTIMAL_Z0 = 1.0 / (_S0 * _S0)

_KINDS = ("optimal", "greedy", "stationary", "threshold", "custom")


@dataclass(frozen=True)
class MarkedPoint:
    time: float
    mark: float


@dataclass(frozen=True)
class PlanarSample:
    horizon: float
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        marks = np.asarray(self.marks, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        if times.shape != marks.shape or times.ndim != 1:
            raise DomainError("times and marks must be 1-d arrays of equal length")
        if not self.horizon >= 0:
            raise DomainError(f"horizon must be >= 0, got {self.horizon!r}")
        if times.size:
            if times[0] < 0 or times[-1] > self.horizon:
                raise DomainError("times must lie in [0, horizon]")
            if np.any(np.diff(times) <= 0):
                raise InvariantViolation("times must be strictly increasing")
            if marks.min() < 0 or marks.max() > 1:
                raise DomainError("marks must lie in [0, 1]")

    def __len__(self) -> int:
        return self.times.size

    @property
    def points(self) -> list[MarkedPoint]:
        return [MarkedPoint(float(a), float(b)) for a, b in zip(self.times, self.marks)]

    @classmethod
    def from_marks(cls, marks, horizon: float | None = None) -> "PlanarSample":
        """Marks at times ``1, 2, ...``; handy for hand-made examples."""
        marks = np.asarray(marks, dtype=float)
        times = np.arange(1, marks.size + 1, dtype=float)
        return cls(float(horizon if horizon is not None else marks.size + 1), times, marks)


def sample_planar(horizon: float, rng: np.random.Generator) -> PlanarSample:
    """Planar Poisson sample on ``[0, horizon] x [0, 1]``.

    Marks come from ``rng.random`` and so are multiples of ``2**-53``; the
    coupling surgery relies on this to stay exact.
    """
    arr = sample_arrivals(horizon, rng)
    return PlanarSample(arr.horizon, arr.times, rng.random(arr.times.size))


@dataclass(frozen=True)
class ControlFunction:
    kind: str
    horizon: float | None = None
    theta: float | None = None
    table_z: tuple = field(default=(), repr=False)
    table_psi: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown control kind {self.kind!r}")

    @classmethod
    def optimal(cls) -> "ControlFunction":
        return cls("optimal")

    @classmethod
    def greedy(cls) -> "ControlFunction":
        return cls("greedy")

    @classmethod
    def stationary(cls, horizon: float) -> "ControlFunction":
        if not horizon > 0:
            raise DomainError("stationary control needs a positive horizon")
        return cls("stationary", horizon=float(horizon))

    @classmethod
    def threshold(cls, theta: float) -> "ControlFunction":
        if not 0 <= theta <= 1:
            raise DomainError("threshold must lie in [0, 1]")
        return cls("threshold", theta=float(theta))

    @classmethod
    def custom(cls, z, psi) -> "ControlFunction":
        """Piecewise-linear control through ``(z, psi)``, flat beyond the ends."""
        z = tuple(float(v) for v in z)
        psi = tuple(float(v) for v in psi)
        if len(z) != len(psi) or not z:
            raise DomainError("custom table needs matching nonempty z and psi")
        if any(b <= a for a, b in zip(z, z[1:])):
            raise DomainError("custom table z values must be strictly increasing")
        return cls("custom", table_z=z, table_psi=psi)

    def __call__(self, z: float, t: float | None = None) -> float:
        return control_value(self, z, t)


def _optimal_psi(z: float) -> float:
    if z <= OPTIMAL_Z0:
        return 1.0
    return min(1.0, max(0.0, math.sqrt(2.0 / z) - 1.0 / (3.0 * z)))


def control_value(control: ControlFunction, z: float, t: float | None = None) -> float:
    """Acceptance-window size for ``z`` expected acceptable arrivals left."""
    if not z >= 0:
        raise DomainError(f"z must be >= 0, got {z!r}")
    kind = control.kind
    if kind == "greedy":
        return 1.0
    if kind == "optimal":
        return _optimal_psi(z)
    if kind == "stationary":
        return min(math.sqrt(2.0 / control.horizon), 1.0)
    if kind == "custom":
        v = float(np.interp(z, control.table_z, control.table_psi))
        return min(1.0, max(0.0, v))
    raise DomainError("threshold controls are not window controls; use threshold_count")


@dataclass(frozen=True)
class SelectionTrace:
    kind: str
    times: np.ndarray
    marks: np.ndarray
    path: np.ndarray

    def __post_init__(self):
        if self.kind not in ("i", "b"):
            raise DomainError(f"trace kind must be 'i' or 'b', got {self.kind!r}")
        if not (self.times.size == self.marks.size == self.path.size):
            raise InvariantViolation("trace arrays differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise InvariantViolation("accepted times must increase")
        if self.kind == "i" and self.marks.size > 1 and np.any(np.diff(self.marks) <= 0):
            raise InvariantViolation("i-trace marks must increase")
        if self.kind == "b" and self.path.size and self.path[-1] > 1.0:
            raise InvariantViolation("b-trace total exceeds 1")

    @property
    def count(self) -> int:
        return int(self.times.size)

    @property
    def accepted(self) -> list[MarkedPoint]:
        return [MarkedPoint(float(a), float(b)) for a, b in zip(self.times, self.marks)]

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "count": self.count,
            "times": self.times.tolist(),
            "marks": self.marks.tolist(),
            "path": self.path.tolist(),
        }


def _run_policy(sample: PlanarSample, control: ControlFunction, kind: str) -> SelectionTrace:
    t = sample.horizon
    x = 0.0
    idx = []
    path = []
    for i, (tau, xi) in enumerate(zip(sample.times.tolist(), sample.marks.tolist())):
        room = 1.0 - x
        if room <= 0.0:
            break
        rel = (xi - x) / room if kind == "i" else xi / room
        if 0.0 < rel <= control_value(control, (t - tau) * room, t):
            x = xi if kind == "i" else x + xi
            idx.append(i)
            path.append(x)
    idx = np.array(idx, dtype=np.int64)
    return SelectionTrace(kind, sample.times[idx], sample.marks[idx], np.array(path, dtype=float))


def run_i_policy(sample: PlanarSample, control: ControlFunction) -> SelectionTrace:
    """Increasing selection under ``control``; ``trace.count`` is ``L(t)``."""
    return _run_policy(sample, control, "i")


def run_b_policy(sample: PlanarSample, control: ControlFunction) -> SelectionTrace:
    """Unit-bin packing under ``control``; ``trace.path`` is the running total."""
    return _run_policy(sample, control, "b")


def threshold_count(sample: PlanarSample, theta: float) -> int:
    """Number of marks at most ``theta`` (meets the sum constraint only in mean)."""
    if not 0 <= theta <= 1:
        raise DomainError("threshold must lie in [0, 1]")
    return int(np.count_nonzero(sample.marks <= theta))


def smallest_first_count(items, capacity: float = 1.0) -> int:
    """Items packed when filling a bin of ``capacity`` smallest first."""
    if not capacity > 0:
        raise DomainError(f"capacity must be > 0, got {capacity!r}")
    items = np.sort(np.asarray(items, dtype=float))
    # marks are in [0, 1]; arrival times of a path also qualify as items
    if items.size and (items[0] < 0 or not np.isfinite(items[-1])):
        raise DomainError("items must be finite and nonnegative")
    return int(np.searchsorted(np.cumsum(items), capacity, side="right"))


@njit(cache=True)
def _patience(marks):
    tops = np.empty(marks.size + 1)
    piles = 0
    for x in marks:
        lo = 0
        hi = piles
        while lo < hi:
            mid = (lo + hi) >> 1
            if tops[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        tops[lo] = x
        if lo == piles:
            piles += 1
    return piles


def lis_length(sample: PlanarSample | np.ndarray) -> int:
    """Longest strictly increasing run of marks in time order (patience sorting)."""
    marks = sample.marks if isinstance(sample, PlanarSample) else np.asarray(sample, dtype=float)
    return int(_patience(np.ascontiguousarray(marks, dtype=float)))


# ---------------------------------------------------------------------------
# Batch kernels


@njit(cache=True)
def _opt_psi(z, z0):
    if z <= z0:
        return 1.0
    v = np.sqrt(2.0 / z) - 1.0 / (3.0 * z)
    return min(1.0, max(0.0, v))


@njit(cache=True)
def _opt_cum(z, z0):
    # integral of the optimal control over [0, z]
    if z <= z0:
        return z
    return z0 + 2.0 * np.sqrt(2.0) * (np.sqrt(z) - np.sqrt(z0)) - np.log(z / z0) / 3.0


@njit(cache=True)
def _opt_cum_inv(c, z0):
    if c <= z0:
        return c
    r2 = 2.0 * np.sqrt(2.0)
    k = c - z0 + r2 * np.sqrt(z0) - np.log(z0) / 3.0
    # g(w) = r2 w - (2/3) log w - k is convex and increasing for w >= sqrt(z0)
    w = max(np.sqrt(z0), k / r2)
    for _ in range(60):
        g = r2 * w - 2.0 / 3.0 * np.log(w) - k
        step = g / (r2 - 2.0 / (3.0 * w))
        w -= step
        if abs(step) <= 1e-15 * w:
            break
    return w * w


@njit(cache=True)
def _online_counts(rng, t, kind, c, z0, size):
    # kind 0 greedy, 1 optimal: acceptances form a Poisson process in
    # z = (t - tau)(1 - x) with intensity psi(z), run downward from z = t.
    # kind 2 stationary: constant window c, acceptance rate c(1 - x) in time.
    out = np.empty(size, np.int64)
    for i in range(size):
        n = 0
        if kind == 2:
            s = 0.0
            room = 1.0
            while True:
                s += nb_exponential(rng) / (room * c)
                if s > t:
                    break
                n += 1
                room *= 1.0 - nb_open_uniform(rng) * c
        else:
            z = t
            while True:
                if kind == 0:
                    target = z - nb_exponential(rng)
                    if target <= 0.0:
                        break
                    z1 = target
                    psi = 1.0
                else:
                    target = _opt_cum(z, z0) - nb_exponential(rng)
                    if target <= 0.0:
                        break
                    z1 = _opt_cum_inv(target, z0)
                    psi = _opt_psi(z1, z0)
                n += 1
                z = z1 * (1.0 - nb_open_uniform(rng) * psi)
        out[i] = n
    return out


@njit(cache=True)
def _lis_lengths(rng, t, size):
    out = np.empty(size, np.int64)
    for i in range(size):
        clock = 0.0
        m = 0
        while True:
            clock += nb_exponential(rng)
            if clock > t:
                break
            m += 1
        marks = np.empty(m)
        for j in range(m):
            marks[j] = rng.random()
        out[i] = _patience(marks)
    return out


@njit(cache=True)
def _threshold_counts(rng, t, theta, size):
    out = np.empty(size, np.int64)
    for i in range(size):
        clock = 0.0
        n = 0
        while True:
            clock += nb_exponential(rng)
            if clock > t:
                break
            if rng.random() <= theta:
                n += 1
        out[i] = n
    return out


@njit(cache=True)
def _smallest_first_fixed(rng, n, capacity, size):
    # uniform order statistics generated upward: given u_(k), the next one is
    # u_(k) + (1 - u_(k)) * Beta(1, n - k)
    out = np.empty(size, np.int64)
    for i in range(size):
        u = 0.0
        total = 0.0
        k = 0
        while k < n:
            u += (1.0 - u) * -np.expm1(np.log(nb_open_uniform(rng)) / (n - k))
            if total + u > capacity:
                break
            total += u
            k += 1
        out[i] = k
    return out


@njit(cache=True)
def _capacity_counts(rng, t, capacity, size):
    # Poisson(rate t) items on [0, 1] arrive already sorted by size
    out = np.empty(size, np.int64)
    for i in range(size):
        item = 0.0
        total = 0.0
        n = 0
        while True:
            item += nb_exponential(rng) / t
            if item > 1.0:
                break
            total += item
            if total > capacity:
                break
            n += 1
        out[i] = n
    return out


def sample_online_counts(t: float, control: ControlFunction, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draws of the online selection count at horizon ``t``.

    Equal in law for the i- and b-policy. Supported controls: optimal,
    greedy, stationary.
    """
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t!r}")
    if control.kind == "greedy":
        return _online_counts(rng, float(t), 0, 1.0, OPTIMAL_Z0, int(size))
    if control.kind == "optimal":
        return _online_counts(rng, float(t), 1, 1.0, OPTIMAL_Z0, int(size))
    if control.kind == "stationary":
        c = control_value(control, 0.0)
        return _online_counts(rng, float(t), 2, c, OPTIMAL_Z0, int(size))
    raise DomainError(f"no direct sampler for {control.kind!r} controls; scan samples with run_i_policy")


def sample_lis_lengths(t: float, rng: np.random.Generator, size: int) -> np.ndarray:
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    return _lis_lengths(rng, float(t), int(size))


def sample_threshold_counts(t: float, theta: float, rng: np.random.Generator, size: int) -> np.ndarray:
    if not 0 <= theta <= 1:
        raise DomainError("threshold must lie in [0, 1]")
    return _threshold_counts(rng, float(t), float(theta), int(size))


def sample_smallest_first_fixed(n: int, capacity: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draws of ``K_{C,n}``: smallest-first count for ``n`` uniform items."""
    if int(n) != n or n < 0:
        raise DomainError(f"n must be a nonnegative integer, got {n!r}")
    if not capacity > 0:
        raise DomainError(f"capacity must be > 0, got {capacity!r}")
    return _smallest_first_fixed(rng, int(n), float(capacity), int(size))


def sample_capacity_counts(t: float, capacity: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draws of ``N_C(t)``: smallest-first count for a rate-``t`` Poisson sample of sizes."""
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t!r}")
    if not capacity > 0:
        raise DomainError(f"capacity must be > 0, got {capacity!r}")
    return _capacity_counts(rng, float(t), float(capacity), int(size))
