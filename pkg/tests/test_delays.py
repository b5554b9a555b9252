"""Delay-line exactness: analytic shifts of piecewise-linear signals."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softsense.delays import DelayLine


def test_zero_delay_passthrough():
    line = DelayLine(0.0, 1.0)
    line.push(0.0, 3.5)
    assert line.output(0.0) == pytest.approx(3.5, abs=0)


def test_constant_input_constant_output():
    line = DelayLine(5.0, 2.0)
    for t in np.arange(0.0, 20.0, 1.0):
        line.push(t, 2.0)
        assert line.output(t) == pytest.approx(2.0, abs=0)


def test_ramp_analytic_shift():
    # unit ramp through a 5 s delay, queried at t=12 -> 12 - 5 = 7
    line = DelayLine(5.0, 0.0)
    for t in (0.0, 4.0, 10.0, 12.0):  # sparse pushes; linear interp is exact
        line.push(t, t)
    assert float(line.output(12.0)) == pytest.approx(7.0, abs=1e-12)


def test_initial_fill_before_history():
    line = DelayLine(30.0, -1.0)
    line.push(0.0, 5.0)
    line.push(10.0, 6.0)
    assert float(line.output(20.0)) == -1.0  # t - tau < 0: initial fill
    assert float(line.output(35.0)) == pytest.approx(5.5, abs=1e-12)


def test_time_regression_rejected():
    line = DelayLine(1.0, 0.0)
    line.push(5.0, 1.0)
    with pytest.raises(ValueError, match="time regression"):
        line.push(4.0, 2.0)


def test_vector_values():
    line = DelayLine(2.0, np.zeros(3))
    line.push(0.0, [1.0, 2.0, 3.0])
    line.push(4.0, [5.0, 6.0, 7.0])
    out = line.output(4.0)  # input at t=2 -> halfway
    np.testing.assert_allclose(out, [3.0, 4.0, 5.0], atol=1e-12)


def test_history_trimming_keeps_bracket():
    line = DelayLine(5.0, 0.0, max_history=10.0)
    for t in np.arange(0.0, 200.0, 1.0):
        line.push(t, t)
    assert float(line.output(199.0)) == pytest.approx(194.0, abs=1e-12)
    assert len(line._times) < 40


@settings(max_examples=50, deadline=None)
@given(
    tau=st.floats(0.5, 30.0),
    breaks=st.lists(st.floats(0.1, 50.0), min_size=2, max_size=8),
    seed=st.integers(0, 2**31 - 1),
)
def test_piecewise_linear_exactness(tau, breaks, seed):
    """Pushed breakpoints of any piecewise-linear signal replay exactly."""
    rng = np.random.default_rng(seed)
    times = np.concatenate([[0.0], np.cumsum(breaks)])
    values = rng.uniform(-10, 10, size=times.size)
    line = DelayLine(tau, values[0], max_history=1e9)
    for t, v in zip(times, values):
        line.push(t, v)
    # query at shifted interior points: linear interpolation both sides
    for q in np.linspace(times[0] + tau, times[-1] + tau, 13):
        s = q - tau
        expected = np.interp(s, times, values)
        assert float(line.output(q)[0]) == pytest.approx(expected, abs=1e-12)
