"""Discrete PI controllers with output saturation and anti-windup."""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["PIController", "pi_step"]


@dataclass
class PIController:
    """Velocity-free PI controller sampled at a fixed interval.

    Output is ``clamp(bias + kp * e + ki * integral(e))`` with conditional
    integration: when the output is saturated and the error would push it
    further into the limit, the integrator holds.
    """

    kp: float
    ki: float
    setpoint: float
    bias: float = 0.0
    out_min: float = float("-inf")
    out_max: float = float("inf")
    anti_windup: bool = True
    integral: float = field(default=0.0)

    def step(self, measurement: float, dt: float) -> float:
        if dt <= 0:
            raise ValueError(f"controller step requires dt > 0, got {dt}")
        e = self.setpoint - measurement
        integral_new = self.integral + e * dt
        u_raw = self.bias + self.kp * e + self.ki * integral_new
        u = min(max(u_raw, self.out_min), self.out_max)
        if self.anti_windup and u != u_raw:
            # Saturated: only integrate if it drives the output back in range.
            pushes_further = (u_raw > self.out_max and self.ki * e > 0) or (
                u_raw < self.out_min and self.ki * e < 0
            )
            if pushes_further:
                integral_new = self.integral
                u_raw = self.bias + self.kp * e + self.ki * integral_new
                u = min(max(u_raw, self.out_min), self.out_max)
        self.integral = integral_new
        return u

    def output(self, measurement: float) -> float:
        """Current output without advancing the integrator."""
        e = self.setpoint - measurement
        u = self.bias + self.kp * e + self.ki * self.integral
        return min(max(u, self.out_min), self.out_max)

    def set_steady(self, measurement: float, target_output: float) -> None:
        """Back-solve the integrator so output(measurement) == target_output."""
        if self.ki == 0:
            raise ValueError("cannot back-solve integrator with ki == 0")
        e = self.setpoint - measurement
        self.integral = (target_output - self.bias - self.kp * e) / self.ki

    def copy(self) -> "PIController":
        return PIController(
            kp=self.kp,
            ki=self.ki,
            setpoint=self.setpoint,
            bias=self.bias,
            out_min=self.out_min,
            out_max=self.out_max,
            anti_windup=self.anti_windup,
            integral=self.integral,
        )


def pi_step(ctrl: PIController, measurement: float, dt: float) -> float:
    """Advance ``ctrl`` by one sample interval and return the actuator value."""
    return ctrl.step(measurement, dt)
