"""Test-RMSE evaluation, trajectory prediction, error decomposition, and
comparison tables keyed like the experiment grid."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .datagen import parse_result_code

__all__ = [
    "rmse",
    "predict_trajectory",
    "segment_error_decomposition",
    "SegmentErrors",
    "ScenarioResult",
    "build_comparison_table",
    "render_table",
    "frequency_alpha_matrix",
    "settling_time",
    "write_results_csv",
    "read_results_csv",
]


def rmse(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Root mean square error; operates on normalized quality values."""
    predictions = np.asarray(predictions, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if predictions.shape != truth.shape or predictions.size == 0:
        raise ValueError(
            f"length mismatch: {predictions.shape} predictions vs {truth.shape} truth"
        )
    return float(np.sqrt(np.mean((predictions - truth) ** 2)))


def predict_trajectory(model, X_full: np.ndarray, chunk: int = 4096):
    """Prediction (mean, std) at every row of a structured feature trajectory.

    Streams through the model in chunks to bound memory; the feature matrix
    must be structured the way the model was trained (X/X5; XS models
    consume single-time-point rows).
    """
    mean, var = model.predict(np.asarray(X_full, dtype=float), chunk=chunk)
    return mean, np.sqrt(var)


@dataclass
class SegmentErrors:
    """Steady/transient decomposition of prediction error."""

    steady_mae: float | None
    transient_mae: float | None
    ratio: float | None  # transient / steady; None when undefined

    def __str__(self):
        fmt = lambda v: "absent" if v is None else f"{v:.6g}"
        return (
            f"steady MAE {fmt(self.steady_mae)}, transient MAE "
            f"{fmt(self.transient_mae)}, ratio {fmt(self.ratio)}"
        )


def segment_error_decomposition(
    predicted: np.ndarray, truth: np.ndarray, steady_mask: np.ndarray
) -> SegmentErrors:
    """Mean absolute error on steady-flagged vs. transient-flagged points."""
    predicted = np.asarray(predicted, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    steady_mask = np.asarray(steady_mask, dtype=bool).ravel()
    if not (predicted.shape == truth.shape == steady_mask.shape):
        raise ValueError("predicted, truth and mask must be aligned")
    err = np.abs(predicted - truth)
    steady = float(np.mean(err[steady_mask])) if steady_mask.any() else None
    transient = float(np.mean(err[~steady_mask])) if (~steady_mask).any() else None
    if steady is None or transient is None or steady == 0.0:
        ratio = None
    else:
        ratio = transient / steady
    return SegmentErrors(steady, transient, ratio)


# ---------------------------------------------------------------------------
# Scenario results
# ---------------------------------------------------------------------------


@dataclass
class ScenarioResult:
    """One cell of the experiment grid."""

    code: str  # e.g. "1-Y-XS-S-10"
    trajectory_id: str
    model_kind: str
    alpha: float | None
    set_id: int
    noise_tag: str
    structure: str
    test_rmse: float
    selection_rmse: float
    restart_rmses: list[float] = field(default_factory=list)
    relative_to_dkl: float | None = None
    wall_time_s: float = 0.0
    seed: int = 0
    prediction_path: str = ""

    def __post_init__(self):
        if self.test_rmse < 0:
            raise ValueError("test RMSE must be nonnegative")
        parsed = parse_result_code(self.code)
        if parsed[:4] != (self.set_id, self.noise_tag, self.structure, self.model_kind):
            raise ValueError(f"result code {self.code!r} does not match fields")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=float)

    @staticmethod
    def from_json(text: str) -> "ScenarioResult":
        return ScenarioResult(**json.loads(text))


_CSV_FIELDS = [
    "code",
    "trajectory_id",
    "model_kind",
    "alpha",
    "set_id",
    "noise_tag",
    "structure",
    "test_rmse",
    "selection_rmse",
    "relative_to_dkl",
    "wall_time_s",
    "seed",
    "prediction_path",
    "restart_rmses",
]


def write_results_csv(results: list[ScenarioResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for r in results:
            row = asdict(r)
            row["restart_rmses"] = ";".join(repr(float(v)) for v in r.restart_rmses)
            writer.writerow(row)


def read_results_csv(path: str | Path) -> list[ScenarioResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row["alpha"] = None if row["alpha"] == "" else float(row["alpha"])
            row["relative_to_dkl"] = (
                None if row["relative_to_dkl"] == "" else float(row["relative_to_dkl"])
            )
            row["set_id"] = int(row["set_id"])
            row["seed"] = int(row["seed"])
            for key in ("test_rmse", "selection_rmse", "wall_time_s"):
                row[key] = float(row[key])
            row["restart_rmses"] = [
                float(v) for v in row["restart_rmses"].split(";") if v
            ]
            out.append(ScenarioResult(**row))
    return out


# ---------------------------------------------------------------------------
# Comparison tables
# ---------------------------------------------------------------------------

_ROW_ORDER = [("SSDKL", 0.1), ("SSDKL", 1.0), ("SSDKL", 10.0), ("DKL", None), ("GP", None)]


def _row_label(kind: str, alpha: float | None) -> str:
    return f"SSDKL a={alpha:g}" if kind == "SSDKL" else kind


@dataclass
class ComparisonTable:
    """RMSE table: rows = models, columns = input structures."""

    title: str
    columns: list[str]
    rows: list[str]
    values: np.ndarray  # (n_rows, n_cols) RMSE; NaN for missing
    relative: np.ndarray  # percent relative to the DKL row, NaN on DKL/GP rows
    minima: list[int]  # per-column row index of the minimum


def build_comparison_table(
    results: list[ScenarioResult], set_id: int, noise_tag: str, title: str = ""
) -> ComparisonTable:
    """Assemble the per-(set, noise) model x structure comparison.

    Relative percentages are 100 * (rmse - rmse_DKL) / rmse_DKL within each
    column.  Ties for the per-column minimum break toward smaller alpha,
    then DKL, then GP (the fixed row order).
    """
    pool = [r for r in results if r.set_id == set_id and r.noise_tag == noise_tag]
    columns = sorted({r.structure for r in pool}, key=["X", "X5", "XS"].index)
    if not columns:
        raise ValueError(f"no results for set {set_id}, noise {noise_tag}")
    values = np.full((len(_ROW_ORDER), len(columns)), np.nan)
    for r in pool:
        key = (r.model_kind, r.alpha if r.model_kind == "SSDKL" else None)
        if key not in _ROW_ORDER:
            continue
        values[_ROW_ORDER.index(key), columns.index(r.structure)] = r.test_rmse
    dkl_row = _ROW_ORDER.index(("DKL", None))
    relative = np.full_like(values, np.nan)
    for j in range(len(columns)):
        dkl = values[dkl_row, j]
        if math.isnan(dkl):
            raise ValueError(
                f"missing DKL baseline for column {columns[j]!r} "
                f"(set {set_id}, noise {noise_tag})"
            )
        for i, (kind, _) in enumerate(_ROW_ORDER):
            if kind == "SSDKL" and not math.isnan(values[i, j]):
                relative[i, j] = 100.0 * (values[i, j] - dkl) / dkl
    minima = []
    for j in range(len(columns)):
        col = values[:, j]
        finite = np.where(np.isfinite(col))[0]
        minima.append(int(finite[np.argmin(col[finite])]) if finite.size else -1)
    return ComparisonTable(
        title=title or f"Set {set_id}, APRBS {noise_tag}",
        columns=columns,
        rows=[_row_label(k, a) for k, a in _ROW_ORDER],
        values=values,
        relative=relative,
        minima=minima,
    )


def render_table(table: ComparisonTable, decimals: int = 5) -> str:
    """Plain-text rendering; the per-column minimum is starred."""
    width = max(12, decimals + 7)
    header = f"{table.title}\n" + " " * 14 + "".join(
        f"{c:>{width}}" for c in table.columns
    )
    lines = [header]
    for i, row_name in enumerate(table.rows):
        cells = []
        for j in range(len(table.columns)):
            v = table.values[i, j]
            if math.isnan(v):
                cells.append(f"{'-':>{width}}")
                continue
            star = "*" if table.minima[j] == i else " "
            cells.append(f"{v:>{width - 1}.{decimals}f}{star}")
        lines.append(f"{row_name:<14}" + "".join(cells))
        if not np.all(np.isnan(table.relative[i])):
            rel_cells = []
            for j in range(len(table.columns)):
                r = table.relative[i, j]
                rel_cells.append(
                    f"{'':>{width}}" if math.isnan(r) else f"{r:>+{width - 2}.0f}% "
                )
            lines.append(" " * 14 + "".join(rel_cells))
    return "\n".join(lines)


def table_to_csv(table: ComparisonTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + table.columns + [f"rel_{c}" for c in table.columns])
        for i, row_name in enumerate(table.rows):
            writer.writerow(
                [row_name]
                + [repr(float(v)) for v in table.values[i]]
                + [repr(float(v)) for v in table.relative[i]]
            )


def frequency_alpha_matrix(
    results: list[ScenarioResult],
    structure: str = "XS",
    noise_tag: str = "Y",
    scale: float = 100.0,
):
    """alpha x set-id matrix of (scaled) SSDKL RMSEs for one structure."""
    alphas = sorted({r.alpha for r in results if r.model_kind == "SSDKL"})
    sets = sorted({r.set_id for r in results})
    matrix = np.full((len(alphas), len(sets)), np.nan)
    for r in results:
        if r.model_kind != "SSDKL" or r.structure != structure or r.noise_tag != noise_tag:
            continue
        matrix[alphas.index(r.alpha), sets.index(r.set_id)] = scale * r.test_rmse
    return alphas, sets, matrix


# ---------------------------------------------------------------------------
# Closed-loop settling analysis
# ---------------------------------------------------------------------------


def settling_time(
    traj,
    t_step: float,
    columns: tuple[str, ...] = ("y",),
    band_frac: float = 0.01,
    min_rel_delta: float = 0.005,
) -> float | None:
    """Minutes from a step at ``t_step`` until monitored columns stay settled.

    A column settles when it remains within ``band_frac`` of its |final -
    pre-step| delta; columns whose delta is below ``min_rel_delta`` relative
    to the pre-step value did not respond and are skipped.  Returns None if
    no monitored column responded.
    """
    t = traj.times
    i0 = int(np.searchsorted(t, t_step))
    worst = None
    for name in columns:
        c = traj.col(name)
        pre, fin = c[i0 - 1], c[-1]
        delta = fin - pre
        if abs(delta) < min_rel_delta * max(abs(pre), 1e-12):
            continue
        outside = np.abs(c[i0:] - fin) > band_frac * abs(delta)
        idx = np.where(outside)[0]
        settled = 0.0 if idx.size == 0 else (t[min(idx[-1] + 1 + i0, len(t) - 1)] - t_step)
        worst = settled if worst is None else max(worst, settled)
    return None if worst is None else worst / 60.0
