"""Operation-trajectory generation: setpoint schedules and APRBS overlays.

A trajectory is a set of piecewise-constant channels (manipulated variables
and controller setpoints).  Manual schedules carry the large load-change
steps; an amplitude-modulated pseudo-random binary signal (APRBS) adds
smaller excitation on top, with an amplitude tuner that bisects until the
product-quality fluctuation hits a requested target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StepSignal",
    "SetpointSchedule",
    "AprbsSpec",
    "InputTrajectory",
    "gen_aprbs",
    "compose_trajectory",
    "tune_amplitude",
    "wo_quality_probe",
    "TuningError",
]


class TuningError(RuntimeError):
    """Amplitude tuning failed to bracket or converge."""


@dataclass
class StepSignal:
    """Piecewise-constant signal: value is ``values[i]`` on [times[i], times[i+1])."""

    times: np.ndarray  # strictly increasing, starts at 0
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.size == 0 or self.times[0] != 0.0:
            raise ValueError("step signal must start at t=0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("step times must be strictly increasing")
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")

    def sample(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]

    @staticmethod
    def constant(value: float) -> "StepSignal":
        return StepSignal(np.array([0.0]), np.array([float(value)]))


@dataclass
class SetpointSchedule:
    """Manual step schedule per manipulated variable over [0, horizon]."""

    horizon: float
    channels: dict[str, StepSignal] = field(default_factory=dict)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("schedule horizon must be > 0")
        for name, sig in self.channels.items():
            if sig.times[-1] > self.horizon:
                raise ValueError(f"channel {name!r} has steps beyond the horizon")
            lo, hi = self.bounds.get(name, (-np.inf, np.inf))
            if np.any(sig.values < lo) or np.any(sig.values > hi):
                raise ValueError(f"channel {name!r} schedule leaves its bounds")


@dataclass
class AprbsSpec:
    """APRBS parameters for one excited variable.

    ``amplitude`` is the level bound as a fraction of the nominal value;
    levels are drawn uniformly from [-amplitude, +amplitude] (times nominal)
    and hold durations uniformly from [hold_min, hold_max] seconds.
    """

    amplitude: float
    hold_min: float = 60.0
    hold_max: float = 600.0
    seed: int = 0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("APRBS amplitude bound must be >= 0")
        if not 0 < self.hold_min <= self.hold_max:
            raise ValueError("APRBS hold times must satisfy 0 < min <= max")

    def with_amplitude(self, amplitude: float) -> "AprbsSpec":
        return AprbsSpec(amplitude, self.hold_min, self.hold_max, self.seed)


def gen_aprbs(spec: AprbsSpec, horizon: float, nominal: float = 1.0) -> StepSignal:
    """Generate the APRBS overlay signal for one variable.

    The signal is zero-mean around 0 (it is added to a schedule), piecewise
    constant, reproducible from the spec seed.
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    times = [0.0]
    t = 0.0
    while True:
        t += float(rng.uniform(spec.hold_min, spec.hold_max))
        if t >= horizon:
            break
        times.append(t)
    levels = rng.uniform(-spec.amplitude, spec.amplitude, size=len(times)) * nominal
    if spec.amplitude == 0.0:
        levels = np.zeros(len(times))
    return StepSignal(np.asarray(times), levels)


@dataclass
class InputTrajectory:
    """Composed piecewise-constant input channels over [0, horizon]."""

    horizon: float
    channels: dict[str, StepSignal]
    clamp_events: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def has(self, name: str) -> bool:
        return name in self.channels

    def sample(self, name: str, t: np.ndarray) -> np.ndarray:
        return self.channels[name].sample(t)

    def value(self, name: str, t: float) -> float:
        return float(self.channels[name].sample(np.array([t]))[0])


def _merge_steps(a: StepSignal, b: StepSignal) -> StepSignal:
    """Pointwise sum of two step signals (exact, on merged breakpoints)."""
    times = np.union1d(a.times, b.times)
    return StepSignal(times, a.sample(times) + b.sample(times))


def compose_trajectory(
    schedule: SetpointSchedule,
    aprbs: dict[str, StepSignal] | None = None,
    nominal: dict[str, float] | None = None,
) -> InputTrajectory:
    """Overlay APRBS signals on a schedule, clamping to variable bounds.

    Every clamped breakpoint is logged as a clamp event rather than raising:
    real actuators saturate.
    """
    aprbs = aprbs or {}
    for name, sig in aprbs.items():
        if name not in schedule.channels:
            raise ValueError(f"APRBS on unknown channel {name!r}")
        if sig.times[-1] > schedule.horizon:
            raise ValueError(f"APRBS for {name!r} extends past the schedule horizon")
    channels: dict[str, StepSignal] = {}
    clamp_events: list[dict] = []
    for name, sched_sig in schedule.channels.items():
        if name in aprbs:
            merged = _merge_steps(sched_sig, aprbs[name])
        else:
            merged = StepSignal(sched_sig.times.copy(), sched_sig.values.copy())
        lo, hi = schedule.bounds.get(name, (-np.inf, np.inf))
        clipped = np.clip(merged.values, lo, hi)
        for t, raw, cl in zip(merged.times, merged.values, clipped):
            if raw != cl:
                clamp_events.append(
                    {"time": float(t), "channel": name, "raw": float(raw), "clamped": float(cl)}
                )
        channels[name] = StepSignal(merged.times, clipped)
    return InputTrajectory(
        horizon=schedule.horizon,
        channels=channels,
        clamp_events=clamp_events,
        meta={"nominal": dict(nominal or {})},
    )


# ---------------------------------------------------------------------------
# Amplitude tuning
# ---------------------------------------------------------------------------


def peak_to_peak_fraction(y: np.ndarray) -> float:
    """Peak-to-peak fluctuation of a series relative to its median."""
    med = float(np.median(y))
    if med == 0.0:
        return float(np.ptp(y))
    return float(np.ptp(y) / abs(med))


def tune_amplitude(
    spec: AprbsSpec,
    target: float,
    probe,
    rel_tol: float = 0.1,
    max_iters: int = 40,
    amplitude_hi: float = 1.0,
) -> tuple[AprbsSpec, float]:
    """Bisection on the APRBS amplitude bound until the probed quality
    fluctuation matches ``target`` within ``rel_tol`` relative.

    ``probe(spec) -> fluctuation`` runs a steady-schedule simulation with the
    candidate spec and measures the relative peak-to-peak quality
    fluctuation.  The response is expected to be nondecreasing in the
    amplitude over the bracket; observed violations are reported in the
    raised error rather than silently ignored.
    """
    if not 0.0 < target <= 0.2:
        raise ValueError("target fluctuation must be in (0, 0.2]")
    lo, f_lo = 0.0, 0.0  # amplitude 0 provably yields zero fluctuation
    hi = spec.amplitude if spec.amplitude > 0 else 0.1
    f_hi = probe(spec.with_amplitude(hi))
    iters = 0
    while f_hi < target and iters < max_iters:
        if hi >= amplitude_hi:
            raise TuningError(
                f"cannot bracket target {target:.4g}: fluctuation {f_hi:.4g} at "
                f"amplitude bound {hi:.4g}"
            )
        hi = min(2.0 * hi, amplitude_hi)
        f_hi = probe(spec.with_amplitude(hi))
        iters += 1
    best = (hi, f_hi)
    while iters < max_iters:
        if abs(best[1] - target) <= rel_tol * target:
            return spec.with_amplitude(best[0]), best[1]
        mid = 0.5 * (lo + hi)
        f_mid = probe(spec.with_amplitude(mid))
        if f_mid < f_lo - 0.25 * target or f_mid > f_hi + 0.25 * target:
            raise TuningError(
                "quality fluctuation not monotone over bracket: "
                f"f({lo:.4g})={f_lo:.4g}, f({mid:.4g})={f_mid:.4g}, f({hi:.4g})={f_hi:.4g}"
            )
        if abs(f_mid - target) < abs(best[1] - target):
            best = (mid, f_mid)
        if f_mid < target:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        iters += 1
    if abs(best[1] - target) <= rel_tol * target:
        return spec.with_amplitude(best[0]), best[1]
    raise TuningError(
        f"no convergence in {max_iters} probes: best fluctuation {best[1]:.4g} at "
        f"amplitude {best[0]:.4g}, bracket [{lo:.4g}, {hi:.4g}]"
    )


def wo_quality_probe(
    params,
    channels: tuple[str, ...] = ("F1", "F2"),
    probe_horizon: float = 4 * 3600.0,
    output_dt: float = 10.0,
    settle_skip: float = 1800.0,
    steady_state=None,
):
    """Build a probe for :func:`tune_amplitude` on the Williams-Otto model.

    The probe holds the nominal operating point, overlays the candidate
    APRBS on the given feed channels, simulates, discards the initial
    transient, and reports the relative peak-to-peak fluctuation of the
    product quality y.
    """
    from . import wo_model

    op = params.operating_point
    nominal = {"F1": op.f1, "F2": op.f2}
    if steady_state is None:
        steady_state = wo_model.find_steady_state(params, op)

    def probe(candidate: AprbsSpec) -> float:
        schedule = SetpointSchedule(
            horizon=probe_horizon,
            channels={name: StepSignal.constant(nominal[name]) for name in channels},
            bounds={name: params.input_bounds[name] for name in channels},
        )
        overlays = {
            name: gen_aprbs(
                AprbsSpec(
                    candidate.amplitude,
                    candidate.hold_min,
                    candidate.hold_max,
                    candidate.seed + i,
                ),
                probe_horizon,
                nominal=nominal[name],
            )
            for i, name in enumerate(channels)
        }
        inputs = compose_trajectory(schedule, overlays, nominal)
        traj = wo_model.simulate(
            steady_state, inputs, probe_horizon, output_dt, params
        )
        y = traj.col(wo_model.QUALITY_COLUMN)
        keep = traj.times - traj.times[0] >= settle_skip
        return peak_to_peak_fraction(y[keep])

    return probe
