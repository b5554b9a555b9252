"""Config loading: flowsheet constants, trajectory schedules, experiment grids.

Config files are YAML key-value trees.  ``load_flowsheet`` builds the
simulator parameter set; ``load_schedule`` builds a named setpoint schedule
plus its APRBS section; ``ExperimentConfig`` drives dataset generation and
the training grid.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .excitation import AprbsSpec, SetpointSchedule, StepSignal
from .wo_model import (
    ControlParams,
    FlowsheetParams,
    IntegrationParams,
    KineticParams,
    OperatingPoint,
    SeparatorParams,
)

__all__ = [
    "ConfigError",
    "default_config_path",
    "load_yaml",
    "load_flowsheet",
    "load_schedule",
    "ExperimentConfig",
    "SET_LABEL_COUNTS",
]

# Quality-sample counts per 1000 hours for label Sets 1-4.
SET_LABEL_COUNTS = {1: 10, 2: 100, 3: 300, 4: 1000}


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


def default_config_path(name: str) -> Path:
    """Path of a packaged default config (e.g. 'wo_flowsheet.yaml')."""
    return Path(resources.files("softsense") / "configs" / name)


def load_yaml(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_flowsheet(path: str | Path | None = None) -> FlowsheetParams:
    if path is None:
        path = default_config_path("wo_flowsheet.yaml")
    tree = load_yaml(path)
    try:
        kin = tree["kinetics"]
        kinetics = KineticParams(
            arrhenius_a=np.asarray(kin["arrhenius_a"], dtype=float),
            arrhenius_b=np.asarray(kin["arrhenius_b"], dtype=float),
            heats=np.asarray(kin["heats"], dtype=float),
        )
        sep = tree.get("separators", {})
        separators = SeparatorParams(
            p_retention_frac=sep.get("p_retention_frac", 0.1),
            entrainment=dict(sep.get("entrainment", {"E": 0.6})),
            purge_frac=sep.get("purge_frac", 0.4),
        )
        control = ControlParams(**tree.get("control", {}))
        integration = IntegrationParams(**tree.get("integration", {}))
        op = OperatingPoint(**tree.get("operating_point", {}))
        bounds = {
            k: (float(v[0]), float(v[1])) for k, v in tree.get("input_bounds", {}).items()
        }
        return FlowsheetParams(
            kinetics=kinetics,
            separators=separators,
            control=control,
            integration=integration,
            operating_point=op,
            capacity_kg=float(tree["capacity_kg"]),
            cp=float(tree["cp"]),
            feed_temp=float(tree["feed_temp"]),
            recycle_temp=float(tree["recycle_temp"]),
            delay_reactor_decanter=float(tree["delay_reactor_decanter"]),
            delay_decanter_column=float(tree["delay_decanter_column"]),
            delay_column_reactor=float(tree["delay_column_reactor"]),
            t4_limit=float(tree["t4_limit"]),
            kill_p_above_limit=bool(tree.get("kill_p_above_limit", False)),
            input_bounds=bounds or FlowsheetParams.__dataclass_fields__["input_bounds"].default_factory(),
        )
    except KeyError as err:
        raise ConfigError(f"flowsheet config missing key: {err}") from err


def load_schedule(
    name_or_path: str | Path, params: FlowsheetParams, horizon: float | None = None
) -> tuple[SetpointSchedule, dict[str, AprbsSpec], dict]:
    """Load a trajectory schedule config (packaged name like 'wo1' or a path).

    Returns (schedule, aprbs specs keyed by channel, raw tree).  Step times
    in the file are fractions of the horizon so the same shape works at any
    experiment scale; values are multiples of the nominal operating point.
    """
    path = Path(name_or_path)
    if not path.exists():
        path = default_config_path(f"schedule_{name_or_path}.yaml")
    tree = load_yaml(path)
    op = params.operating_point
    nominal = {"F1": op.f1, "F2": op.f2, "T4_sp": op.t4_sp, "L_sp": op.l_sp}
    horizon = float(horizon if horizon is not None else tree["default_horizon_h"] * 3600.0)
    channels: dict[str, StepSignal] = {}
    for name, steps in tree["channels"].items():
        if name not in nominal:
            raise ConfigError(f"schedule channel {name!r} unknown")
        times = np.array([float(s[0]) for s in steps]) * horizon
        if name in ("T4_sp", "L_sp"):
            # Setpoints are absolute offsets from nominal, not multiples.
            values = nominal[name] + np.array([float(s[1]) for s in steps])
        else:
            values = nominal[name] * np.array([float(s[1]) for s in steps])
        channels[name] = StepSignal(times, values)
    bounds = {name: params.input_bounds[name] for name in channels}
    schedule = SetpointSchedule(horizon=horizon, channels=channels, bounds=bounds)
    aprbs: dict[str, AprbsSpec] = {}
    for name, spec in tree.get("aprbs", {}).items():
        aprbs[name] = AprbsSpec(
            amplitude=float(spec.get("amplitude", 0.0)),
            hold_min=float(spec.get("hold_min", 60.0)),
            hold_max=float(spec.get("hold_max", 600.0)),
            seed=int(spec.get("seed", 0)),
        )
    return schedule, aprbs, tree


@dataclass
class ExperimentConfig:
    """One experiment run: trajectory, dataset options, model grid."""

    flowsheet_config: Path
    trajectory_id: str = "wo1"
    horizon_h: float = 50.0
    output_dt: float = 10.0
    label_sets: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    noise_tags: list[str] = field(default_factory=lambda: ["Y", "N"])
    structures: list[str] = field(default_factory=lambda: ["X", "XS", "X5"])
    model_kinds: list[str] = field(default_factory=lambda: ["SSDKL", "DKL", "GP"])
    alphas: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])
    restarts: int = 10
    master_seed: int = 2024
    label_scale: float = 20.0
    unlabeled_cap: int = 4096
    variance_batch: int = 256
    max_iters: int = 600
    test_fraction: float = 0.2
    quality_target: float = 0.033
    out_dir: Path = Path("runs")
    workers: int = 1

    def __post_init__(self):
        self.flowsheet_config = Path(self.flowsheet_config)
        self.out_dir = Path(self.out_dir)
        if not self.flowsheet_config.exists():
            raise ConfigError(f"flowsheet config not found: {self.flowsheet_config}")
        for s in self.label_sets:
            if s not in SET_LABEL_COUNTS:
                raise ConfigError(f"unknown label set id {s}")
        for tag in self.noise_tags:
            if tag not in ("Y", "N"):
                raise ConfigError(f"noise tag must be Y or N, got {tag!r}")
        for st in self.structures:
            if st not in ("X", "XS", "X5"):
                raise ConfigError(f"unknown input structure {st!r}")
        for kind in self.model_kinds:
            if kind not in ("SSDKL", "DKL", "GP"):
                raise ConfigError(f"unknown model kind {kind!r}")
        if "SSDKL" in self.model_kinds and not self.alphas:
            raise ConfigError("alpha list must be nonempty when SSDKL is selected")

    @staticmethod
    def from_file(path: str | Path, **overrides) -> "ExperimentConfig":
        tree = load_yaml(path)
        tree.pop("description", None)
        fs = tree.pop("flowsheet_config", None)
        base = Path(path).parent
        if fs is None:
            fs_path = default_config_path("wo_flowsheet.yaml")
        else:
            fs_path = Path(fs)
            if not fs_path.is_absolute():
                candidate = base / fs_path
                fs_path = candidate if candidate.exists() else default_config_path(str(fs))
        tree["flowsheet_config"] = fs_path
        out_root = os.environ.get("SOFTSENSE_OUT")
        if out_root and "out_dir" not in tree:
            tree["out_dir"] = Path(out_root)
        tree.update(overrides)
        return ExperimentConfig(**tree)

    @staticmethod
    def default(**overrides) -> "ExperimentConfig":
        cfg = {"flowsheet_config": default_config_path("wo_flowsheet.yaml")}
        cfg.update(overrides)
        return ExperimentConfig(**cfg)
