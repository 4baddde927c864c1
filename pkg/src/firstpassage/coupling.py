"""Cut-and-stack coupling of increasing selection with bin packing.

Given an i-policy run with selections ``(tau_k, xi_k)``, the transform
rearranges, for every ``k`` in turn, the marks of all later points: the
image of the original band ``[xi_{k-1}, xi_k]`` (currently ``[0, h]`` with
``h = xi_k - xi_{k-1}``) is lifted to sit on top of the image of
``[xi_k, 1]``. Times never change. Running the b-policy with the same
control on the transformed sample then selects the same atoms, now carrying
marks ``xi_k - xi_{k-1}``, so its running total retraces the i-path.

Marks drawn by :func:`policies.sample_planar` are multiples of ``2**-53``.
Sums and differences of such numbers inside ``[0, 1]`` are exact in double
precision, so on those samples every surgery, the telescoping identity and
the inverse transform hold bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation
from .policies import (
    ControlFunction,
    PlanarSample,
    SelectionTrace,
    run_b_policy,
    run_i_policy,
    sample_planar,
)
from .rng import RngStream
from .stats import KSResult, ks_uniform, lag1_correlation_z


@dataclass(frozen=True)
class SurgeryStep:
    """Step ``step`` moved every point with index ``>= first_index``."""

    step: int
    xi_prev: float
    xi: float
    first_index: int


@dataclass(frozen=True)
class CouplingResult:
    original: PlanarSample
    transformed: PlanarSample
    i_trace: SelectionTrace
    b_trace: SelectionTrace
    steps: tuple[SurgeryStep, ...]

    def __post_init__(self):
        if not np.array_equal(self.original.times, self.transformed.times):
            raise InvariantViolation("transform changed time coordinates")
        if self.transformed.marks.size and (self.transformed.marks.min() < 0 or self.transformed.marks.max() > 1):
            raise InvariantViolation("transformed marks left [0, 1]")
        if self.i_trace.count != self.b_trace.count:
            raise InvariantViolation("i- and b-traces differ in length")

    def displacements(self, index: int) -> list[tuple[int, float, float]]:
        """``(step, before, after)`` for every surgery that moved point ``index``."""
        y = float(self.original.marks[index])
        out = []
        for s in self.steps:
            if index >= s.first_index:
                new = float(surgery_step(np.array([y]), s.xi_prev, s.xi)[0])
                if new != y:
                    out.append((s.step, y, new))
                y = new
        return out

    @property
    def displacement_log(self) -> list[list[tuple[int, float, float]]]:
        return [self.displacements(i) for i in range(len(self.original))]


def surgery_step(coords: np.ndarray, xi_prev: float, xi: float) -> np.ndarray:
    """One cut-and-stack move applied to current mark coordinates.

    With ``h = xi - xi_prev``: ``[0, h]`` goes to ``[1 - xi, 1 - xi_prev]``,
    ``(h, 1 - xi_prev]`` slides down by ``h``, anything above
    ``1 - xi_prev`` stays. A point exactly at ``h`` counts as the lower slab.
    """
    if not 0.0 <= xi_prev < xi <= 1.0:
        raise InvariantViolation(f"surgery needs 0 <= xi_prev < xi <= 1, got {xi_prev!r}, {xi!r}")
    coords = np.asarray(coords, dtype=float)
    h = xi - xi_prev
    top = 1.0 - xi_prev
    out = coords.copy()
    lower = coords <= h
    upper = (coords > h) & (coords <= top)
    out[lower] = coords[lower] + (1.0 - xi)
    out[upper] = coords[upper] - h
    return out


def inverse_surgery_step(coords: np.ndarray, xi_prev: float, xi: float) -> np.ndarray:
    """Undo :func:`surgery_step` (itself a cut-and-stack of the same band)."""
    if not 0.0 <= xi_prev < xi <= 1.0:
        raise InvariantViolation(f"surgery needs 0 <= xi_prev < xi <= 1, got {xi_prev!r}, {xi!r}")
    coords = np.asarray(coords, dtype=float)
    h = xi - xi_prev
    top = 1.0 - xi_prev
    base = 1.0 - xi
    out = coords.copy()
    lifted = (coords >= base) & (coords <= top)
    slid = coords < base
    out[lifted] = coords[lifted] - base
    out[slid] = coords[slid] + h
    return out


def transform(sample: PlanarSample, control: ControlFunction) -> CouplingResult:
    """Map an i-policy run to a b-policy run on the rearranged sample."""
    i_trace = run_i_policy(sample, control)
    coords = sample.marks.copy()
    steps = []
    xi_prev = 0.0
    for k, (tau, xi) in enumerate(zip(i_trace.times.tolist(), i_trace.marks.tolist()), start=1):
        first = int(np.searchsorted(sample.times, tau, side="right"))
        later = coords[first:]
        # image of the original band above xi_prev must be [0, 1 - xi_prev]
        above = sample.marks[first:] >= xi_prev
        if np.any(later[above] > 1.0 - xi_prev):
            raise InvariantViolation(f"surgery {k} applied out of order")
        coords[first:] = surgery_step(later, xi_prev, xi)
        steps.append(SurgeryStep(k, xi_prev, xi, first))
        xi_prev = xi
    transformed = PlanarSample(sample.horizon, sample.times, coords)
    b_trace = run_b_policy(transformed, control)
    return CouplingResult(sample, transformed, i_trace, b_trace, tuple(steps))


def invert(result: CouplingResult) -> PlanarSample:
    """Replay the surgeries backwards to recover the original sample."""
    coords = result.transformed.marks.copy()
    for s in reversed(result.steps):
        coords[s.first_index :] = inverse_surgery_step(coords[s.first_index :], s.xi_prev, s.xi)
    return PlanarSample(result.transformed.horizon, result.transformed.times, coords)


def _is_record_sequence(sample: PlanarSample, trace: SelectionTrace) -> bool:
    if len(sample) == 0:
        return trace.count == 0
    running = np.maximum.accumulate(sample.marks)
    is_record = np.empty(len(sample), dtype=bool)
    is_record[0] = sample.marks[0] > 0.0
    is_record[1:] = sample.marks[1:] > running[:-1]
    return np.array_equal(sample.times[is_record], trace.times)


@dataclass(frozen=True)
class RealizationCheck:
    times_fixed: bool
    same_atoms: bool
    telescoping: bool
    invertible: bool
    greedy_records: bool | None = None

    @property
    def ok(self) -> bool:
        return all(
            v for v in (self.times_fixed, self.same_atoms, self.telescoping, self.invertible, self.greedy_records)
            if v is not None
        )


def check_realization(sample: PlanarSample, control: ControlFunction) -> tuple[RealizationCheck, CouplingResult]:
    """Exact per-path checks of the coupling on one sample."""
    res = transform(sample, control)
    i_tr, b_tr = res.i_trace, res.b_trace
    times_fixed = np.array_equal(sample.times, res.transformed.times)
    increments = np.diff(np.concatenate(([0.0], i_tr.marks)))
    same_atoms = (
        i_tr.count == b_tr.count
        and np.array_equal(i_tr.times, b_tr.times)
        and np.array_equal(b_tr.marks, increments)
    )
    telescoping = b_tr.count == i_tr.count and bool(
        np.all(np.abs(np.cumsum(b_tr.marks) - i_tr.marks) <= 1e-12) and np.array_equal(b_tr.path, i_tr.path)
    )
    invertible = np.array_equal(invert(res).marks, sample.marks)
    greedy = _is_record_sequence(sample, i_tr) if control.kind == "greedy" else None
    return RealizationCheck(times_fixed, same_atoms, telescoping, invertible, greedy), res


def verify_coupling(sample: PlanarSample, control: ControlFunction) -> RealizationCheck:
    return check_realization(sample, control)[0]


@dataclass
class CouplingReport:
    control: str
    horizon: float
    realizations: int
    failures: list[dict] = field(default_factory=list)
    uniformity: KSResult | None = None
    serial_z: float = 0.0
    n_marks: int = 0
    mean_count: float = 0.0

    @property
    def deterministic_ok(self) -> bool:
        return not self.failures


def verify_coupling_batch(
    control: ControlFunction,
    horizon: float,
    realizations: int,
    rng: RngStream,
) -> CouplingReport:
    """Run the per-path checks on many samples and test the pooled marks.

    Realization ``r`` draws from ``rng.generator(block=r)``, so any failure is
    replayable from ``(seed, stream_id, r)``.
    """
    report = CouplingReport(control.kind, float(horizon), int(realizations))
    pooled = []
    series = []
    counts = 0
    for r in range(int(realizations)):
        sample = sample_planar(horizon, rng.generator(block=r))
        check, res = check_realization(sample, control)
        if not check.ok:
            report.failures.append(
                {"seed": rng.seed, "stream_id": rng.stream_id, "realization": r, "check": check.__dict__}
            )
        pooled.append(res.transformed.marks)
        series.append(res.transformed.marks)
        counts += res.i_trace.count
    marks = np.concatenate(pooled) if pooled else np.empty(0)
    report.n_marks = int(marks.size)
    if marks.size:
        report.uniformity = ks_uniform(marks)
    report.serial_z = lag1_correlation_z(series)
    report.mean_count = counts / max(1, int(realizations))
    return report
