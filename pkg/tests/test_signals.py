import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ivnn.errors import IndexOutOfRange, InfeasibleProfile, InvalidSignal
from ivnn.signals import (FourthOrderLimits, Signal, delay_line, delay_matrix, derivative_basis_matrix,
                          derivative_scales, fourth_order_phase_durations, make_fourth_order_reference)

TS = 1e-3
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@pytest.fixture(scope="module")
def ref():
    return make_fourth_order_reference(FourthOrderLimits(), TS)


def test_signal_validation():
    with pytest.raises(InvalidSignal):
        Signal([], TS)
    with pytest.raises(InvalidSignal):
        Signal([1.0, np.nan], TS)
    with pytest.raises(InvalidSignal):
        Signal([1.0], 0.0)
    s = Signal([1, 2, 3], 0.5)
    assert len(s) == 3 and s.values.dtype == float
    with pytest.raises(ValueError):
        s.values[0] = 5.0


def test_signal_csv_round_trip(tmp_path):
    s = Signal(np.random.default_rng(1).standard_normal(50), TS)
    s.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "time_s,value"
    back = Signal.from_csv(tmp_path / "s.csv")
    assert np.array_equal(back.values, s.values)
    assert back.ts == pytest.approx(TS, rel=1e-12)


def test_zero_stroke_is_constant_zero():
    r = make_fourth_order_reference(FourthOrderLimits(stroke=0.0), TS)
    assert len(r) == 2000
    assert np.all(r.values == 0.0)


def test_final_position_equals_stroke(ref):
    assert abs(ref.values[-1] - 0.25) < 1e-9


def test_reference_respects_limits(ref):
    # scan of the finite differences against the limits, 1% slack
    lim = FourthOrderLimits()
    bounds = [lim.v_max, lim.a_max, lim.j_max, lim.s_max]
    for order, bound in enumerate(bounds, start=1):
        assert np.max(np.abs(ref.derivative(order))) <= 1.01 * bound, order


def test_reference_lead_in_and_rest(ref):
    assert np.all(ref.values[:500] == 0.0)
    for order in range(1, 4):
        d = ref.derivative(order)
        assert abs(d[0]) < 1e-9 and abs(d[-1]) < 1e-9


def test_phase_durations_reach_stroke():
    lim = FourthOrderLimits()
    t_s, t_j, t_a, t_v = fourth_order_phase_durations(lim)
    # independent evaluation: integrate the snap sequence on a fine grid
    s = lim.s_max
    pulse = [(t_s, s), (t_j, 0), (t_s, -s)]
    up = pulse + [(t_a, 0)] + [(d, -q) for d, q in pulse]
    segs = up + [(t_v, 0)] + [(d, -q) for d, q in up]
    h = 1e-6
    snap = np.concatenate([np.full(int(round(d / h)), q) for d, q in segs if d > 0])
    x = np.cumsum(np.cumsum(np.cumsum(np.cumsum(snap) * h) * h) * h) * h
    assert x[-1] == pytest.approx(lim.stroke, rel=1e-3)


def test_infeasible_profile():
    with pytest.raises(InfeasibleProfile):
        make_fourth_order_reference(FourthOrderLimits(stroke=2.0), TS)


@pytest.mark.parametrize("bad", [dict(v_max=0), dict(s_max=-1), dict(stroke=-0.1), dict(lead_in=-1)])
def test_limits_validation(bad):
    with pytest.raises(ValueError):
        FourthOrderLimits(**bad)


def test_delay_line_examples(ref):
    s = [1.0, 2.0, 3.0]
    assert delay_line(s, 3, 2).tolist() == [3, 2, 1]
    assert delay_line(s, 1, 2).tolist() == [1, 0, 0]
    n = len(ref)
    v = ref.values
    assert delay_line(ref, n, 2).tolist() == [v[n - 1], v[n - 2], v[n - 3]]
    with pytest.raises(IndexOutOfRange):
        delay_line(s, 0, 1)
    with pytest.raises(IndexOutOfRange):
        delay_line(s, 4, 1)


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.integers(1, 30), elements=finite), st.integers(0, 6))
def test_delay_matrix_rows_are_delay_lines(v, p):
    M = delay_matrix(v, p)
    for k in range(1, v.size + 1):
        line = delay_line(v, k, p)
        assert line[0] == v[k - 1]
        assert np.array_equal(M[k - 1], line)


def test_derivative_basis_examples():
    assert np.array_equal(derivative_basis_matrix(1.0), [[1, 0, 0], [1, -1, 0], [1, -2, 1]])
    T = derivative_basis_matrix(TS)
    assert np.allclose(T @ [7.0, 7.0, 7.0], [7, 0, 0], atol=1e-9)
    assert np.allclose(T @ [3.0, 2.0, 1.0], [3, 1000, 0], rtol=1e-12, atol=1e-9)
    scale = np.array([2.0, 4.0, 8.0])
    assert np.allclose(derivative_basis_matrix(TS, scale), T / scale[:, None])


@settings(max_examples=50, deadline=None)
@given(arrays(float, 3, elements=finite), st.sampled_from([1.0, 1e-2, 1e-3]))
def test_derivative_basis_inverts(window, ts):
    # undo the differences: y(k) = x0, y(k-1) = x0 - ts*x1, y(k-2) = 2 y(k-1) - y(k) + ts^2 x2
    x0, x1, x2 = derivative_basis_matrix(ts) @ window
    y1 = x0 - ts * x1
    y2 = ts**2 * x2 - x0 + 2 * y1
    assert np.allclose([x0, y1, y2], window, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(window).max()))


def test_derivative_scales(ref):
    sc = derivative_scales(ref)
    assert sc[0] == pytest.approx(0.25)
    assert sc[1] <= 0.5 * 1.01 and sc[2] <= 1.01
    assert derivative_scales(Signal(np.zeros(5), TS)).tolist() == [1.0, 1.0, 1.0]
