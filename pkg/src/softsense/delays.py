"""Transport-delay lines with linear interpolation between recorded samples.

A :class:`DelayLine` buffers a (possibly vector-valued) signal pushed at
nondecreasing times and replays it shifted by a fixed dead time.  Before the
first recorded input becomes visible the line emits its initial fill value.
"""

from __future__ import annotations

import numpy as np

__all__ = ["DelayLine"]


class DelayLine:
    """Pure transport delay: output(t) = input(t - tau).

    Values pushed at exact timestamps are reproduced exactly; queries between
    samples are linearly interpolated, so piecewise-linear inputs (pushed at
    their breakpoints) are delayed without error.
    """

    def __init__(self, tau: float, initial_value, max_history: float | None = None):
        if tau < 0:
            raise ValueError(f"delay must be >= 0, got {tau}")
        self.tau = float(tau)
        self.initial_value = np.atleast_1d(np.asarray(initial_value, dtype=float)).copy()
        # Keep a margin beyond tau so interpolation at t - tau stays bracketed.
        self.max_history = max_history if max_history is not None else 4.0 * max(tau, 1.0)
        self._times: list[float] = []
        self._values: list[np.ndarray] = []

    def push(self, t: float, value) -> None:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if self._times:
            if t < self._times[-1]:
                raise ValueError(
                    f"time regression in delay line: push at t={t} after t={self._times[-1]}"
                )
            if t == self._times[-1]:
                self._values[-1] = value.copy()
                return
        self._times.append(float(t))
        self._values.append(value.copy())
        self._trim()

    def _trim(self) -> None:
        cutoff = self._times[-1] - self.tau - self.max_history
        drop = 0
        # Keep one sample at or before the cutoff to bracket interpolation.
        while drop + 1 < len(self._times) and self._times[drop + 1] <= cutoff:
            drop += 1
        if drop:
            del self._times[:drop]
            del self._values[:drop]

    def output(self, t: float) -> np.ndarray:
        """Delayed value at time ``t`` (i.e. the input at ``t - tau``)."""
        return self.value_at(t - self.tau)

    def value_at(self, s: float) -> np.ndarray:
        """Interpolated input at absolute time ``s``."""
        if not self._times or s < self._times[0]:
            return self.initial_value.copy()
        times = self._times
        if s >= times[-1]:
            return self._values[-1].copy()
        # Binary search for the bracketing interval.
        lo, hi = 0, len(times) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if times[mid] <= s:
                lo = mid
            else:
                hi = mid
        t0, t1 = times[lo], times[hi]
        if t1 == t0:
            return self._values[hi].copy()
        w = (s - t0) / (t1 - t0)
        return (1.0 - w) * self._values[lo] + w * self._values[hi]

    def prefill(self, t: float, value) -> None:
        """Reset the buffer to a constant history ending at time ``t``."""
        self._times = [float(t)]
        self._values = [np.atleast_1d(np.asarray(value, dtype=float)).copy()]
        self.initial_value = self._values[0].copy()

    def copy(self) -> "DelayLine":
        dup = DelayLine(self.tau, self.initial_value, self.max_history)
        dup._times = list(self._times)
        dup._values = [v.copy() for v in self._values]
        return dup
