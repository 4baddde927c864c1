"""Seeded Monte Carlo harness and the hypothesis tests used by the experiments.

Replications are cut into fixed-size blocks. Block ``b`` always draws from
``rng.generator(block=b)``, so a run is determined by ``(seed, stream_id,
reps, block_size)`` alone; the worker count only decides which process
computes which block. Per-block central moments are merged in block order by
a fixed pairwise tree, which makes the summary bit-identical for any number
of workers.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .errors import DomainError, MonteCarloError
from .processes import sample_zetas
from .analytic import zeta_moments
from .rng import RngStream

BLOCK_SIZE = 1 << 15

Kernel = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    variance: float
    se: float
    skewness: float
    excess_kurtosis: float

    @classmethod
    def from_samples(cls, x) -> "SummaryStats":
        return _Moments.from_array(np.asarray(x, dtype=float)).summary()

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "variance": self.variance,
            "se": self.se,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
        }


@dataclass(frozen=True)
class _Moments:
    """Count, mean and summed central powers 2..4 of a batch."""

    n: int
    mean: float
    m2: float
    m3: float
    m4: float

    @classmethod
    def from_array(cls, x: np.ndarray) -> "_Moments":
        if x.size == 0:
            return cls(0, 0.0, 0.0, 0.0, 0.0)
        mean = float(x.mean())
        d = x - mean
        d2 = d * d
        return cls(int(x.size), mean, float(d2.sum()), float((d2 * d).sum()), float((d2 * d2).sum()))

    def merge(self, other: "_Moments") -> "_Moments":
        na, nb = self.n, other.n
        if na == 0:
            return other
        if nb == 0:
            return self
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        mean = self.mean + d_n * nb
        m2 = self.m2 + other.m2 + delta * d_n * na * nb
        m3 = (
            self.m3
            + other.m3
            + delta * d_n * d_n * na * nb * (na - nb)
            + 3.0 * d_n * (na * other.m2 - nb * self.m2)
        )
        m4 = (
            self.m4
            + other.m4
            + delta * d_n**3 * na * nb * (na * na - na * nb + nb * nb)
            + 6.0 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
            + 4.0 * d_n * (na * other.m3 - nb * self.m3)
        )
        return _Moments(n, mean, m2, m3, m4)

    def summary(self) -> SummaryStats:
        n = self.n
        if n < 2:
            raise DomainError("need at least two replications for a variance")
        variance = self.m2 / (n - 1)
        pop2 = self.m2 / n
        if pop2 > 0:
            skew = (self.m3 / n) / pop2**1.5
            kurt = (self.m4 / n) / pop2**2 - 3.0
        else:
            skew = kurt = 0.0
        return SummaryStats(n, self.mean, variance, math.sqrt(variance / n), skew, kurt)


def variance_se(s: SummaryStats) -> float:
    """Large-sample standard error of ``s.variance``.

    Uses ``Var(s^2) ~ (mu_4 - sigma^4 (n-3)/(n-1)) / n`` with the sample
    kurtosis plugged in.
    """
    n = s.n
    if n < 4:
        raise DomainError("need at least four replications")
    ratio = (s.excess_kurtosis + 3.0) - (n - 3) / (n - 1)
    return s.variance * math.sqrt(max(ratio, 0.0) / n)


def _tree_merge(parts: Sequence[_Moments]) -> _Moments:
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _blocks(reps: int, block_size: int) -> list[tuple[int, int, int]]:
    out = []
    start = 0
    b = 0
    while start < reps:
        size = min(block_size, reps - start)
        out.append((b, start, size))
        start += size
        b += 1
    return out


def _run_blocks(kernel, rng: RngStream, blocks, reduce: bool):
    results = []
    for b, start, size in blocks:
        try:
            out = kernel(rng.generator(block=b), size)
        except Exception as exc:  # noqa: BLE001 - rewrapped with replay context
            raise MonteCarloError(
                f"kernel failed in replicas {start}..{start + size - 1}: {exc!r}",
                rng.seed,
                rng.stream_id,
                start,
                start + size - 1,
            ) from exc
        if reduce:
            out = _Moments.from_array(np.asarray(out, dtype=float))
        results.append((b, out))
    return results


def _dispatch(kernel, reps: int, rng: RngStream, workers: int, block_size: int, reduce: bool):
    if reps < 1:
        raise DomainError(f"reps must be >= 1, got {reps}")
    blocks = _blocks(int(reps), int(block_size))
    workers = max(1, min(int(workers), len(blocks)))
    if workers == 1:
        results = _run_blocks(kernel, rng, blocks, reduce)
    else:
        # round-robin partition; the result does not depend on it
        shards = [blocks[w::workers] for w in range(workers)]
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(_run_blocks, kernel, rng, shard, reduce) for shard in shards]
            results = [r for f in futures for r in f.result()]
    results.sort(key=lambda item: item[0])
    return [r for _, r in results]


def mc_estimate(
    kernel: Kernel,
    reps: int,
    rng: RngStream,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> SummaryStats:
    """Summary statistics of ``reps`` replications of a batch kernel.

    ``kernel(generator, size)`` must return ``size`` independent draws.
    """
    if reps < 2:
        raise DomainError(f"reps must be >= 2, got {reps}")
    parts = _dispatch(kernel, reps, rng, workers, block_size, reduce=True)
    return _tree_merge(parts).summary()


def mc_sample(
    kernel: Callable,
    reps: int,
    rng: RngStream,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
):
    """All ``reps`` draws of a batch kernel, in replica order.

    Kernels returning a tuple of arrays yield a tuple of concatenated arrays.
    """
    parts = _dispatch(kernel, reps, rng, workers, block_size, reduce=False)
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(cols) for cols in zip(*parts))
    return np.concatenate(parts)


def per_replica(fn: Callable[[np.random.Generator], float]) -> Kernel:
    """Adapt a one-realization function to the batch kernel interface."""
    return _PerReplica(fn)


class _PerReplica:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, rng, size):
        return np.array([self.fn(rng) for _ in range(size)], dtype=float)


# ---------------------------------------------------------------------------
# Tests


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    discrete: bool

    def rejects(self, alpha: float) -> bool:
        return self.p_value < alpha


def ks_two_sample(a, b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov distance with its asymptotic p-value.

    On data with ties (``discrete=True``) the p-value is conservative: the
    test rejects less often than ``alpha`` under the null.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise DomainError("both samples must be nonempty")
    grid = np.concatenate((a, b))
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    p = float(sps.kstwobign.sf(d * en)) if d > 0 else 1.0
    discrete = np.unique(grid).size < grid.size
    return KSResult(d, p, bool(discrete))


def ks_uniform(x) -> KSResult:
    """One-sample KS test against Uniform(0, 1)."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    if n == 0:
        raise DomainError("sample must be nonempty")
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))
    return KSResult(d, float(sps.kstwobign.sf(d * math.sqrt(n))), False)


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float

    def rejects(self, alpha: float) -> bool:
        return self.p_value < alpha


def chi_square_gof(observed, expected_probs, min_expected: float = 5.0) -> ChiSquareResult:
    """Pearson goodness of fit of bin counts to bin probabilities.

    Any probability not covered by ``expected_probs`` forms an extra final
    bin; adjacent bins are merged until every expected count reaches
    ``min_expected``.
    """
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(expected_probs, dtype=float)
    if obs.shape != p.shape or obs.ndim != 1:
        raise DomainError("observed and expected_probs must be 1-d of equal length")
    if np.any(p < 0) or np.any(obs < 0):
        raise DomainError("counts and probabilities must be nonnegative")
    rest = 1.0 - float(p.sum())
    if rest > 1e-12:
        p = np.append(p, rest)
        obs = np.append(obs, 0.0)
    total = obs.sum()
    expected = total * p

    merged_o, merged_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            merged_o.append(acc_o)
            merged_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_o or acc_e:
        if merged_e:
            merged_o[-1] += acc_o
            merged_e[-1] += acc_e
        else:
            merged_o.append(acc_o)
            merged_e.append(acc_e)
    if len(merged_e) < 2:
        raise DomainError("binning is degenerate: fewer than two bins after merging")
    o = np.array(merged_o)
    e = np.array(merged_e)
    stat = float(np.sum((o - e) ** 2 / e))
    dof = len(e) - 1
    return ChiSquareResult(stat, dof, float(sps.chi2.sf(stat, dof)))


def chi_square_counts(samples, probs) -> ChiSquareResult:
    """Chi-square of integer samples against a law on ``0..len(probs)-1``.

    Samples above the listed range are pooled with the unlisted mass.
    """
    samples = np.asarray(samples)
    k = len(probs)
    counts = np.bincount(np.minimum(samples, k), minlength=k + 1).astype(float)
    probs = np.asarray(probs, dtype=float)
    extra = counts[k]
    obs = counts[:k].copy()
    if extra:
        obs = np.append(obs, extra)
        probs = np.append(probs, max(0.0, 1.0 - probs.sum()))
    return chi_square_gof(obs, probs)


def lag1_correlation_z(series: Sequence[np.ndarray]) -> float:
    """z-score of the pooled lag-1 correlation of centered uniforms.

    Each element of ``series`` is one realization's sequence; pairs are taken
    within realizations only.
    """
    num = 0.0
    pairs = 0
    for s in series:
        s = np.asarray(s, dtype=float) - 0.5
        if s.size > 1:
            num += float(np.dot(s[:-1], s[1:]))
            pairs += s.size - 1
    if pairs == 0:
        return 0.0
    # under independence each product has mean 0 and variance (1/12)^2
    return num / (math.sqrt(pairs) / 12.0)


@dataclass(frozen=True)
class TailRow:
    z: float
    empirical: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.empirical

    @property
    def ok(self) -> bool:
        return self.empirical <= self.bound


def tail_bound_check(
    n: int,
    reps: int,
    z_grid: Sequence[float],
    rng: RngStream,
    workers: int = 1,
) -> list[TailRow]:
    """Empirical ``P(|zeta_n - a_n| > z sd)`` against ``3 exp(-z/4)``.

    ``sd`` is the standard deviation of ``zeta_n``.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if any(z < 0 for z in z_grid):
        raise DomainError("z values must be nonnegative")
    mp = zeta_moments(n)
    sd = math.sqrt(mp.variance)
    draws = mc_sample(_ZetaKernel(int(n)), reps, rng, workers)
    dev = np.sort(np.abs(draws - mp.mean) / sd)
    rows = []
    for z in z_grid:
        exceed = dev.size - int(np.searchsorted(dev, z, side="right"))
        rows.append(TailRow(float(z), exceed / dev.size, 3.0 * math.exp(-z / 4.0)))
    return rows


class _ZetaKernel:
    def __init__(self, n):
        self.n = n

    def __call__(self, rng, size):
        return sample_zetas(self.n, rng, size)
