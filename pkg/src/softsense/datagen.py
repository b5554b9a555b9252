"""Regression-dataset construction from simulated trajectories.

Selects the measured-variable set, places sparse quality labels at random
grid times (Sets 1-4, scaled to the experiment horizon), detects
steady-state rows, applies the X / X5 / XS input structurings, holds out
contiguous test segments, and min-max normalizes.

Scenario codes follow the short-hand ``<set>-<Y|N>-<structure>`` for
datasets, extended with ``-<S|D|G>[-alpha]`` for trained models, e.g.
``1-Y-X5-S-10``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .trajio import Trajectory
from .wo_model import FEATURE_COLUMNS, QUALITY_COLUMN

__all__ = [
    "DatasetError",
    "LabelSetSpec",
    "NormStats",
    "SensorDataset",
    "SET_LABEL_COUNTS",
    "select_features",
    "place_labels",
    "detect_steady_state",
    "structure_features",
    "structure_inputs",
    "normalize_fit",
    "normalize_apply",
    "normalize_invert",
    "subsample_unlabeled",
    "build_dataset",
    "format_dataset_code",
    "parse_dataset_code",
    "format_result_code",
    "parse_result_code",
]

SET_LABEL_COUNTS = {1: 10, 2: 100, 3: 300, 4: 1000}

_SEED_LABELS = 11
_SEED_SEGMENTS = 12
_SEED_SUBSAMPLE = 13


class DatasetError(ValueError):
    pass


@dataclass
class LabelSetSpec:
    """Quality-label sampling frequency (Sets 1-4) plus placement seed."""

    set_id: int
    seed: int = 0

    def __post_init__(self):
        if self.set_id not in SET_LABEL_COUNTS:
            raise DatasetError(f"unknown label set id {self.set_id}")

    @property
    def count_per_1000h(self) -> int:
        return SET_LABEL_COUNTS[self.set_id]


# ---------------------------------------------------------------------------
# Feature selection
# ---------------------------------------------------------------------------


def select_features(traj: Trajectory):
    """Measured-variable matrix X and quality series y from a raw trajectory.

    X columns (fixed order): F1, F2, L, T4, FG, FD, FP, Q.
    y is the mass fraction of P in the product stream PP.
    """
    for name in FEATURE_COLUMNS + [QUALITY_COLUMN, "time"]:
        if name not in traj.columns:
            raise DatasetError(f"trajectory is missing required column {name!r}")
    X = np.column_stack([traj.col(name) for name in FEATURE_COLUMNS])
    y = traj.col(QUALITY_COLUMN).copy()
    return X, y, traj.times.copy()


# ---------------------------------------------------------------------------
# Label placement
# ---------------------------------------------------------------------------


def label_count(set_id: int, horizon_h: float, label_scale: float = 1.0) -> int:
    """Number of quality labels for a set id at a given horizon.

    Proportional to the horizon; ``label_scale`` compresses the paper-scale
    sampling frequencies onto desk-scale horizons while preserving the
    relative frequency ladder between sets.
    """
    raw = SET_LABEL_COUNTS[set_id] * horizon_h / 1000.0 * label_scale
    return int(np.floor(raw + 0.5))


def place_labels(
    n_grid: int,
    spec: LabelSetSpec,
    horizon_h: float,
    label_scale: float = 1.0,
    eligible: np.ndarray | None = None,
) -> np.ndarray:
    """Uniformly random distinct grid indices for quality measurements.

    ``eligible`` restricts placement (e.g. to non-test rows).  Deterministic
    per spec seed.
    """
    count = label_count(spec.set_id, horizon_h, label_scale)
    pool = np.arange(n_grid) if eligible is None else np.asarray(eligible)
    if count > pool.size:
        raise DatasetError(
            f"requested {count} labels but only {pool.size} eligible grid points"
        )
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _SEED_LABELS]))
    idx = rng.choice(pool, size=count, replace=False)
    return np.sort(idx)


# ---------------------------------------------------------------------------
# Steady-state detection
# ---------------------------------------------------------------------------


def detect_steady_state(
    X: np.ndarray,
    dt: float,
    window: float = 120.0,
    threshold_frac: float = 0.05,
    thresholds: np.ndarray | None = None,
) -> np.ndarray:
    """Flag rows whose trailing-window feature variation is below threshold.

    Row k is steady iff, over the trailing ``window`` seconds, every
    column's peak-to-peak range is <= its threshold (default: a fraction of
    the column's global range).  Rows without a full window of history are
    never steady.
    """
    n, d = X.shape
    w = max(int(round(window / dt)), 1)
    if w >= n:
        raise DatasetError("steady-state window must be shorter than the horizon")
    if thresholds is None:
        thresholds = threshold_frac * (X.max(axis=0) - X.min(axis=0))
    mask = np.zeros(n, dtype=bool)
    ok = np.ones(n - w + 1, dtype=bool)
    for j in range(d):
        windows = np.lib.stride_tricks.sliding_window_view(X[:, j], w)
        ptp = windows.max(axis=1) - windows.min(axis=1)
        ok &= ptp <= thresholds[j]
    mask[w - 1 :] = ok
    return mask


# ---------------------------------------------------------------------------
# Input structuring
# ---------------------------------------------------------------------------


def structure_features(X: np.ndarray, structure: str, lags: int = 4):
    """Apply an input structure to a raw feature matrix.

    Returns (X_struct, grid_rows) where ``grid_rows[i]`` is the raw grid row
    that structured row i refers to.  X and XS use the current time point
    only; X5 concatenates time points k..k-4 (rows with incomplete history
    are dropped).
    """
    n = X.shape[0]
    if structure in ("X", "XS"):
        return X.copy(), np.arange(n)
    if structure == "X5":
        parts = [X[lags - j : n - j] for j in range(lags + 1)]
        return np.hstack(parts), np.arange(lags, n)
    raise DatasetError(f"unknown input structure {structure!r}")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class NormStats:
    """Min-max normalization metadata fitted on training data."""

    lo: np.ndarray
    hi: np.ndarray
    constant: np.ndarray  # columns with zero training range map to 0.5

    @property
    def span(self) -> np.ndarray:
        return np.where(self.constant, 1.0, self.hi - self.lo)


def normalize_fit(values: np.ndarray) -> NormStats:
    values = np.atleast_2d(np.asarray(values, dtype=float).T).T
    lo = values.min(axis=0)
    hi = values.max(axis=0)
    return NormStats(lo=lo, hi=hi, constant=hi == lo)


def normalize_apply(values: np.ndarray, stats: NormStats) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    scaled = (values - stats.lo) / stats.span
    return np.where(stats.constant, 0.5, scaled)


def normalize_invert(scaled: np.ndarray, stats: NormStats) -> np.ndarray:
    scaled = np.asarray(scaled, dtype=float)
    return np.where(stats.constant, stats.lo, scaled * stats.span + stats.lo)


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------


@dataclass
class SensorDataset:
    """Structured, normalized regression dataset with index pools.

    ``X`` holds every structured row over the full horizon (normalized);
    ``y`` the normalized quality truth at each row.  ``labeled_idx`` /
    ``unlabeled_idx`` index training pools; ``test_idx`` the held-out
    contiguous segments.  Pools are pairwise disjoint.
    """

    code: str
    set_id: int
    noise_tag: str
    structure: str
    feature_names: list[str]
    times: np.ndarray
    X: np.ndarray
    y: np.ndarray
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray
    test_idx: np.ndarray
    steady_mask: np.ndarray
    x_norm: NormStats
    y_norm: NormStats
    seeds: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.labeled_idx.size)

    @property
    def n_unlabeled(self) -> int:
        return int(self.unlabeled_idx.size)

    def labeled(self):
        return self.X[self.labeled_idx], self.y[self.labeled_idx]

    def unlabeled(self):
        return self.X[self.unlabeled_idx]

    def test(self):
        return self.X[self.test_idx], self.y[self.test_idx]

    def validate(self) -> None:
        pools = [set(self.labeled_idx), set(self.unlabeled_idx), set(self.test_idx)]
        if pools[0] & pools[1] or pools[0] & pools[2] or pools[1] & pools[2]:
            raise DatasetError("labeled/unlabeled/test pools overlap")
        if self.m == 0 or self.n_unlabeled <= self.m:
            raise DatasetError(
                f"expected n >> m, got m={self.m}, n={self.n_unlabeled}"
            )
        parsed = parse_dataset_code(self.code)
        if parsed != (self.set_id, self.noise_tag, self.structure):
            raise DatasetError(f"scenario code {self.code!r} does not round-trip")


# ---------------------------------------------------------------------------
# Scenario codes
# ---------------------------------------------------------------------------

_MODEL_LETTER = {"SSDKL": "S", "DKL": "D", "GP": "G"}
_LETTER_MODEL = {v: k for k, v in _MODEL_LETTER.items()}


def _format_alpha(alpha: float) -> str:
    return f"{alpha:g}"


def format_dataset_code(set_id: int, noise_tag: str, structure: str) -> str:
    if noise_tag not in ("Y", "N"):
        raise DatasetError(f"noise tag must be Y or N, got {noise_tag!r}")
    if structure not in ("X", "X5", "XS"):
        raise DatasetError(f"unknown structure {structure!r}")
    if set_id not in SET_LABEL_COUNTS:
        raise DatasetError(f"unknown set id {set_id}")
    return f"{set_id}-{noise_tag}-{structure}"


def parse_dataset_code(code: str) -> tuple[int, str, str]:
    parts = code.split("-")
    if len(parts) != 3:
        raise DatasetError(f"malformed dataset code {code!r}")
    set_id, noise_tag, structure = int(parts[0]), parts[1], parts[2]
    format_dataset_code(set_id, noise_tag, structure)  # validates
    return set_id, noise_tag, structure


def format_result_code(
    set_id: int, noise_tag: str, structure: str, kind: str, alpha: float | None = None
) -> str:
    base = format_dataset_code(set_id, noise_tag, structure)
    letter = _MODEL_LETTER.get(kind)
    if letter is None:
        raise DatasetError(f"unknown model kind {kind!r}")
    if kind == "SSDKL":
        if alpha is None:
            raise DatasetError("SSDKL result code requires alpha")
        return f"{base}-{letter}-{_format_alpha(alpha)}"
    return f"{base}-{letter}"


def parse_result_code(code: str):
    parts = code.split("-")
    if len(parts) not in (4, 5):
        raise DatasetError(f"malformed result code {code!r}")
    set_id, noise_tag, structure = parse_dataset_code("-".join(parts[:3]))
    kind = _LETTER_MODEL.get(parts[3])
    if kind is None:
        raise DatasetError(f"unknown model letter {parts[3]!r} in {code!r}")
    alpha = None
    if kind == "SSDKL":
        if len(parts) != 5:
            raise DatasetError(f"SSDKL code {code!r} missing alpha")
        alpha = float(parts[4])
    elif len(parts) == 5:
        raise DatasetError(f"alpha suffix only applies to SSDKL: {code!r}")
    return set_id, noise_tag, structure, kind, alpha


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def test_segments(
    n_grid: int, seed: int, fraction: float = 0.2, n_segments: int = 4
) -> np.ndarray:
    """Boolean mask of held-out contiguous test segments.

    The grid is divided into ``n_segments / fraction`` equal blocks and
    ``n_segments`` distinct blocks are drawn; each becomes one contiguous
    test segment.  Deterministic per seed.
    """
    n_blocks = int(round(n_segments / fraction))
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SEED_SEGMENTS]))
    chosen = rng.choice(n_blocks, size=n_segments, replace=False)
    edges = np.linspace(0, n_grid, n_blocks + 1).astype(int)
    mask = np.zeros(n_grid, dtype=bool)
    for b in chosen:
        mask[edges[b] : edges[b + 1]] = True
    return mask


def subsample_unlabeled(dataset: SensorDataset, max_count: int, seed: int) -> SensorDataset:
    """Cap the unlabeled pool at ``max_count`` rows (uniform, seeded)."""
    if max_count < 1:
        raise DatasetError("max_count must be >= 1")
    if dataset.n_unlabeled <= max_count:
        return dataset
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SEED_SUBSAMPLE]))
    keep = rng.choice(dataset.unlabeled_idx, size=max_count, replace=False)
    return replace(dataset, unlabeled_idx=np.sort(keep))


def structure_inputs(dataset: SensorDataset, structure: str) -> SensorDataset:
    """Restructure an X-mode dataset in place of re-simulating.

    X returns a copy; X5 lag-stacks rows k..k-4 (rows with incomplete
    history are dropped and pool indices remapped); XS retains only
    steady-flagged rows for the labeled and unlabeled pools.  Note the grid
    pipeline (:func:`build_dataset`) instead restricts label *placement* to
    steady rows so per-set label counts are preserved; this operation
    filters existing pools.
    """
    if dataset.structure != "X":
        raise DatasetError("structure_inputs expects an X-structured dataset")
    set_id, noise_tag, _ = parse_dataset_code(dataset.code)
    if structure == "X":
        return replace(dataset)
    if structure == "XS":
        steady = dataset.steady_mask
        if not steady.any():
            raise DatasetError("XS requested but the steady row set is empty")
        keep_l = dataset.labeled_idx[steady[dataset.labeled_idx]]
        keep_u = dataset.unlabeled_idx[steady[dataset.unlabeled_idx]]
        return replace(
            dataset,
            code=format_dataset_code(set_id, noise_tag, "XS"),
            structure="XS",
            labeled_idx=keep_l,
            unlabeled_idx=keep_u,
        )
    if structure == "X5":
        lags = 4
        n = dataset.X.shape[0]
        X5, grid_rows = structure_features(dataset.X, "X5", lags=lags)

        def remap(idx):
            idx = idx[idx >= lags] - lags
            return idx

        norm5 = NormStats(
            lo=np.tile(dataset.x_norm.lo, lags + 1),
            hi=np.tile(dataset.x_norm.hi, lags + 1),
            constant=np.tile(dataset.x_norm.constant, lags + 1),
        )
        return replace(
            dataset,
            code=format_dataset_code(set_id, noise_tag, "X5"),
            structure="X5",
            feature_names=_structured_names("X5", lags),
            times=dataset.times[grid_rows],
            X=X5,
            y=dataset.y[grid_rows],
            labeled_idx=remap(dataset.labeled_idx),
            unlabeled_idx=remap(dataset.unlabeled_idx),
            test_idx=remap(dataset.test_idx),
            steady_mask=dataset.steady_mask[grid_rows],
            x_norm=norm5,
        )
    raise DatasetError(f"unknown input structure {structure!r}")


def build_dataset(
    traj: Trajectory,
    set_id: int,
    noise_tag: str,
    structure: str,
    seed: int,
    label_scale: float = 1.0,
    unlabeled_cap: int | None = None,
    test_fraction: float = 0.2,
    steady_window: float = 120.0,
    steady_threshold_frac: float = 0.05,
) -> SensorDataset:
    """Full pipeline from a raw trajectory to a normalized SensorDataset."""
    X_raw, y_raw, times = select_features(traj)
    horizon_h = (times[-1] - times[0]) / 3600.0
    steady_raw = detect_steady_state(
        X_raw, traj.dt, window=steady_window, threshold_frac=steady_threshold_frac
    )
    X_struct, grid_rows = structure_features(X_raw, structure)
    y_struct = y_raw[grid_rows]
    t_struct = times[grid_rows]
    steady = steady_raw[grid_rows]

    test_mask_grid = test_segments(len(times), seed, fraction=test_fraction)
    test_mask = test_mask_grid[grid_rows]
    test_idx = np.where(test_mask)[0]

    eligible_mask = ~test_mask
    if structure == "XS":
        eligible_mask &= steady
        if not eligible_mask.any():
            raise DatasetError("XS structure requested but no steady rows available")
    eligible = np.where(eligible_mask)[0]

    spec = LabelSetSpec(set_id=set_id, seed=seed)
    labeled_idx = place_labels(
        X_struct.shape[0], spec, horizon_h, label_scale, eligible=eligible
    )
    unlabeled_idx = np.setdiff1d(eligible, labeled_idx)

    x_norm = normalize_fit(X_struct[~test_mask])
    y_norm = normalize_fit(y_struct[labeled_idx])

    code = format_dataset_code(set_id, noise_tag, structure)
    dataset = SensorDataset(
        code=code,
        set_id=set_id,
        noise_tag=noise_tag,
        structure=structure,
        feature_names=_structured_names(structure),
        times=t_struct,
        X=normalize_apply(X_struct, x_norm),
        y=normalize_apply(y_struct, y_norm).ravel(),
        labeled_idx=labeled_idx,
        unlabeled_idx=unlabeled_idx,
        test_idx=test_idx,
        steady_mask=steady,
        x_norm=x_norm,
        y_norm=y_norm,
        seeds={"placement": seed},
        meta={"horizon_h": horizon_h, "label_scale": label_scale, "dt": traj.dt},
    )
    if unlabeled_cap is not None:
        dataset = subsample_unlabeled(dataset, unlabeled_cap, seed)
    dataset.validate()
    return dataset


def _structured_names(structure: str, lags: int = 4) -> list[str]:
    if structure in ("X", "XS"):
        return list(FEATURE_COLUMNS)
    return [f"{name}_k-{j}" if j else f"{name}_k" for j in range(lags + 1) for name in FEATURE_COLUMNS]
