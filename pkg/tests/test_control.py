"""PI controller behavior: bias passthrough, proportional action, anti-windup."""

import pytest

from softsense.control import PIController, pi_step


def test_zero_error_outputs_bias():
    ctrl = PIController(kp=2.0, ki=0.5, setpoint=1.0, bias=7.0)
    for _ in range(10):
        u = pi_step(ctrl, 1.0, dt=1.0)
        assert u == pytest.approx(7.0, abs=0)
    assert ctrl.integral == pytest.approx(0.0, abs=0)


def test_pure_proportional():
    ctrl = PIController(kp=2.0, ki=0.0, setpoint=1.0, bias=0.0)
    assert pi_step(ctrl, 0.0, dt=0.1) == pytest.approx(2.0)


def test_integral_accumulates():
    ctrl = PIController(kp=0.0, ki=1.0, setpoint=1.0, bias=0.0)
    assert pi_step(ctrl, 0.0, dt=1.0) == pytest.approx(1.0)
    assert pi_step(ctrl, 0.0, dt=1.0) == pytest.approx(2.0)


def test_output_always_saturated():
    ctrl = PIController(kp=10.0, ki=1.0, setpoint=0.0, bias=0.0, out_min=-1.0, out_max=1.0)
    for meas in (-5.0, 5.0, -100.0, 100.0):
        u = pi_step(ctrl, meas, dt=1.0)
        assert -1.0 <= u <= 1.0


def test_anti_windup_freezes_integrator():
    ctrl = PIController(kp=0.0, ki=1.0, setpoint=1.0, bias=0.0, out_max=0.5)
    pi_step(ctrl, 0.0, dt=1.0)  # saturates at 0.5
    frozen = ctrl.integral
    for _ in range(50):
        pi_step(ctrl, 0.0, dt=1.0)
    assert ctrl.integral == pytest.approx(frozen)
    # once the error reverses, the integrator moves again
    pi_step(ctrl, 2.0, dt=1.0)
    assert ctrl.integral < frozen


def test_windup_without_protection():
    ctrl = PIController(
        kp=0.0, ki=1.0, setpoint=1.0, bias=0.0, out_max=0.5, anti_windup=False
    )
    for _ in range(10):
        pi_step(ctrl, 0.0, dt=1.0)
    assert ctrl.integral == pytest.approx(10.0)


def test_set_steady_backsolves_integrator():
    ctrl = PIController(kp=-20.0, ki=-0.05, setpoint=0.7, bias=0.0)
    ctrl.set_steady(0.7, target_output=19.0)
    assert ctrl.output(0.7) == pytest.approx(19.0, abs=1e-12)


def test_dt_must_be_positive():
    ctrl = PIController(kp=1.0, ki=0.0, setpoint=0.0)
    with pytest.raises(ValueError):
        pi_step(ctrl, 0.0, dt=0.0)
