"""Adaptive embedded Runge-Kutta integrator (Dormand-Prince 4(5)).

Written against a plain ``rhs(t, y) -> dy`` callback so the flowsheet
simulator can freeze actuator values per control interval and look up
delayed signals from committed history inside the callback.  The stepper
keeps its step size across ``advance`` calls.
"""

from __future__ import annotations

import numpy as np

__all__ = ["IntegrationError", "AdaptiveRk45"]

# Dormand-Prince 4(5) tableau.
_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_B5 = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0)
_B4 = (
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


class IntegrationError(RuntimeError):
    """Step underflow or non-finite state; carries the failure time."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (at t={t:.6g} s)")
        self.t = t


class AdaptiveRk45:
    def __init__(
        self,
        rhs,
        rtol: float = 1e-8,
        atol: float = 1e-10,
        max_step: float = np.inf,
        min_step: float = 1e-10,
        first_step: float | None = None,
    ):
        self.rhs = rhs
        self.rtol = float(rtol)
        self.atol = float(atol)
        self.max_step = float(max_step)
        self.min_step = float(min_step)
        self.h = first_step if first_step is not None else min(max_step, 1.0)

    def advance(self, t0: float, y0: np.ndarray, t1: float) -> np.ndarray:
        """Integrate from ``t0`` to exactly ``t1``; returns the final state."""
        t = t0
        y = np.asarray(y0, dtype=float).copy()
        while t < t1:
            h = min(self.h, self.max_step, t1 - t)
            y, t, h_next = self._step(t, y, h, t1)
            # Only let accepted full steps grow the persistent step size.
            self.h = min(h_next, self.max_step)
        return y

    def _step(self, t: float, y: np.ndarray, h: float, t1: float):
        k = [None] * 7
        while True:
            if h < self.min_step:
                raise IntegrationError("step size underflow", t)
            k[0] = self.rhs(t, y)
            for i in range(1, 7):
                yi = y + h * sum(aij * k[j] for j, aij in enumerate(_A[i]))
                k[i] = self.rhs(t + _C[i] * h, yi)
            y_new = y + h * sum(b * k[j] for j, b in enumerate(_B5) if b != 0.0)
            err = h * sum(e * k[j] for j, e in enumerate(_E) if e != 0.0)
            if not np.all(np.isfinite(y_new)):
                raise IntegrationError("non-finite state", t)
            scale = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if err_norm <= 1.0:
                if err_norm == 0.0:
                    factor = 5.0
                else:
                    factor = min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
                return y_new, t + h, h * factor
            h *= min(0.9, max(0.2, 0.9 * err_norm ** -0.2))
