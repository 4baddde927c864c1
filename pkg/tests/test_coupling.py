from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firstpassage.coupling import (
    check_realization,
    inverse_surgery_step,
    invert,
    surgery_step,
    transform,
    verify_coupling,
    verify_coupling_batch,
)
from firstpassage.errors import InvariantViolation
from firstpassage.policies import ControlFunction, PlanarSample, sample_planar
from firstpassage.rng import RngStream

ALPHA = 1e-3


def gen(seed):
    return RngStream(seed).generator()


# --- the single step --------------------------------------------------------


def test_surgery_step_example():
    # h = 0.25, top = 0.75: lower slab lifts by 0.5, middle slides down by 0.25
    out = surgery_step(np.array([0.1, 0.25, 0.5, 0.75, 0.9]), 0.25, 0.5)
    assert out.tolist() == [0.6, 0.75, 0.25, 0.5, 0.9]


def test_surgery_rejects_bad_band():
    for a, b in ((0.5, 0.5), (0.6, 0.4), (-0.1, 0.2), (0.2, 1.1)):
        with pytest.raises(InvariantViolation):
            surgery_step(np.array([0.1]), a, b)
        with pytest.raises(InvariantViolation):
            inverse_surgery_step(np.array([0.1]), a, b)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(0, 2**53), min_size=1, max_size=30),
    st.integers(0, 2**53 - 2),
    st.integers(1, 2**53),
)
def test_surgery_roundtrip_is_exact(ints, a, d):
    scale = 2.0**-53
    xi_prev = a * scale
    xi = min(a + d, 2**53) * scale
    if not xi_prev < xi:
        return
    y = np.array(ints, dtype=float) * scale
    assert np.array_equal(inverse_surgery_step(surgery_step(y, xi_prev, xi), xi_prev, xi), y)


def test_surgery_is_measure_preserving_on_grid():
    # a fine uniform grid maps onto itself
    grid = (np.arange(1, 1025) / 1024.0)
    out = surgery_step(grid, 0.25, 0.625)
    assert sorted(out.tolist()) == grid.tolist()


# --- whole transform --------------------------------------------------------


def test_greedy_hand_example():
    # dyadic marks keep the arithmetic exact
    s = PlanarSample.from_marks([0.5, 0.25, 0.875], horizon=10.0)
    res = transform(s, ControlFunction.greedy())
    assert res.i_trace.marks.tolist() == [0.5, 0.875]
    assert res.transformed.marks.tolist() == [0.5, 0.75, 0.375]
    assert res.b_trace.marks.tolist() == [0.5, 0.375]
    assert res.b_trace.times.tolist() == res.i_trace.times.tolist() == [1.0, 3.0]
    assert verify_coupling(s, ControlFunction.greedy()).ok


def test_single_selection_keeps_its_mark():
    s = PlanarSample.from_marks([0.75, 0.5], horizon=5.0)
    res = transform(s, ControlFunction.greedy())
    assert res.i_trace.count == 1
    assert res.b_trace.marks.tolist() == [0.75]
    # the leftover point is lifted into the band above the first cut
    assert res.transformed.marks.tolist() == [0.75, 0.75]


def test_zero_control_is_identity():
    s = sample_planar(40.0, gen(1))
    res = transform(s, ControlFunction.custom([0.0, 1.0], [0.0, 0.0]))
    assert res.i_trace.count == 0 and res.steps == ()
    assert np.array_equal(res.transformed.marks, s.marks)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32), kind=st.sampled_from(["greedy", "optimal", "stationary"]))
def test_coupling_checks_on_random_samples(seed, kind):
    t = 50.0
    control = ControlFunction.stationary(t) if kind == "stationary" else getattr(ControlFunction, kind)()
    sample = sample_planar(t, gen(seed))
    chk, res = check_realization(sample, control)
    assert chk.ok, chk
    assert np.array_equal(invert(res).marks, sample.marks)
    if kind == "greedy":
        assert chk.greedy_records


def test_displacement_log_replays_the_transform():
    s = sample_planar(50.0, gen(7))
    res = transform(s, ControlFunction.greedy())
    log = res.displacement_log
    assert len(log) == len(s)
    for i, moves in enumerate(log):
        final = moves[-1][2] if moves else s.marks[i]
        assert final == res.transformed.marks[i]
        for (_, _, after), (_, before, _) in zip(moves, moves[1:]):
            assert after == before


def test_batch_report():
    rep = verify_coupling_batch(ControlFunction.optimal(), 50.0, 500, RngStream(3).child("c"))
    assert rep.deterministic_ok and rep.failures == []
    assert rep.uniformity is not None and not rep.uniformity.rejects(ALPHA)
    assert abs(rep.serial_z) < 3.2905
    assert rep.n_marks > 20_000 and rep.mean_count > 5


def test_batch_report_replays():
    a = verify_coupling_batch(ControlFunction.greedy(), 20.0, 50, RngStream(4))
    b = verify_coupling_batch(ControlFunction.greedy(), 20.0, 50, RngStream(4))
    assert a.serial_z == b.serial_z and a.n_marks == b.n_marks
