"""Dataset pipeline: feature selection, label placement, steady detection,
structuring, normalization, scenario codes."""

import numpy as np
import pytest

from softsense import datagen
from softsense.datagen import (
    DatasetError,
    LabelSetSpec,
    build_dataset,
    detect_steady_state,
    format_dataset_code,
    format_result_code,
    label_count,
    normalize_apply,
    normalize_fit,
    normalize_invert,
    parse_dataset_code,
    parse_result_code,
    place_labels,
    select_features,
    structure_features,
    structure_inputs,
    subsample_unlabeled,
)
from softsense.datagen import test_segments as held_out_segments
from softsense.trajio import Trajectory
from softsense.wo_model import FEATURE_COLUMNS, TRAJECTORY_COLUMNS


def synthetic_trajectory(n=2000, dt=10.0, seed=0):
    """Feature-complete trajectory with slow waves + steps in every column."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) * dt
    data = np.zeros((n, len(TRAJECTORY_COLUMNS)))
    cols = {name: i for i, name in enumerate(TRAJECTORY_COLUMNS)}
    data[:, cols["time"]] = t
    for j, name in enumerate(FEATURE_COLUMNS):
        wave = np.sin(2 * np.pi * t / (3000.0 + 400 * j) + j)
        step = (t > (0.3 + 0.05 * j) * t[-1]).astype(float)
        data[:, cols[name]] = 1.0 + 0.1 * wave + 0.3 * step + 0.01 * j
    data[:, cols["y"]] = 0.76 + 0.01 * np.sin(2 * np.pi * t / 5000.0)
    return Trajectory(columns=list(TRAJECTORY_COLUMNS), data=data, dt=dt)


# ---------------------------------------------------------------------------
# select_features
# ---------------------------------------------------------------------------


def test_select_features_column_order():
    traj = synthetic_trajectory()
    X, y, times = select_features(traj)
    assert X.shape == (traj.n_rows, 8)
    for j, name in enumerate(FEATURE_COLUMNS):
        np.testing.assert_array_equal(X[:, j], traj.col(name))
    np.testing.assert_array_equal(y, traj.col("y"))


def test_select_features_missing_column():
    traj = synthetic_trajectory()
    cols = [c if c != "FP" else "FLOW_P" for c in traj.columns]
    broken = Trajectory(columns=cols, data=traj.data, dt=traj.dt)
    with pytest.raises(DatasetError, match="FP"):
        select_features(broken)


def test_constant_trajectory_constant_features():
    traj = synthetic_trajectory()
    traj.data[:, 1:] = traj.data[0, 1:]
    X, y, _ = select_features(traj)
    assert np.all(X == X[0])


# ---------------------------------------------------------------------------
# Label placement
# ---------------------------------------------------------------------------


def test_label_counts_match_set_ids():
    # Set 1 at paper scale: 10 labels over 1000 h
    assert label_count(1, 1000.0) == 10
    # Set 4 on a 100 h desk-scale grid
    assert label_count(4, 100.0) == 100
    # proportional scaling preserves the frequency ladder
    assert label_count(3, 50.0, label_scale=20.0) == 300


def test_place_labels_distinct_and_deterministic():
    spec = LabelSetSpec(2, seed=9)
    a = place_labels(100_000, spec, 1000.0)
    b = place_labels(100_000, spec, 1000.0)
    np.testing.assert_array_equal(a, b)
    assert len(np.unique(a)) == len(a) == 100
    c = place_labels(100_000, LabelSetSpec(2, seed=10), 1000.0)
    assert not np.array_equal(a, c)


def test_place_labels_respects_eligibility():
    eligible = np.arange(0, 1000, 7)
    idx = place_labels(1000, LabelSetSpec(1, seed=0), 1000.0, eligible=eligible)
    assert np.all(np.isin(idx, eligible))


def test_place_labels_overflow_error():
    with pytest.raises(DatasetError, match="eligible"):
        place_labels(5, LabelSetSpec(1, seed=0), 1000.0)


def test_unknown_set_id():
    with pytest.raises(DatasetError):
        LabelSetSpec(9)


# ---------------------------------------------------------------------------
# Steady-state detection
# ---------------------------------------------------------------------------


def test_constant_trajectory_all_steady_after_window():
    X = np.ones((500, 3))
    mask = detect_steady_state(X, dt=10.0, window=100.0)
    w = 10
    assert not mask[: w - 1].any()
    assert mask[w - 1 :].all()


def test_step_creates_transient_window():
    n = 1000
    X = np.ones((n, 2))
    X[400:, 0] = 2.0  # step at k=400
    mask = detect_steady_state(X, dt=10.0, window=200.0, threshold_frac=0.01)
    assert mask[350]
    assert not mask[400:419].any()  # window straddles the step
    assert mask[425:].all()


def test_window_must_fit():
    with pytest.raises(DatasetError):
        detect_steady_state(np.ones((10, 2)), dt=10.0, window=200.0)


# ---------------------------------------------------------------------------
# Structuring
# ---------------------------------------------------------------------------


def test_structure_x_identity():
    X = np.arange(40.0).reshape(10, 4)
    Xs, rows = structure_features(X, "X")
    np.testing.assert_array_equal(Xs, X)
    np.testing.assert_array_equal(rows, np.arange(10))


def test_structure_x5_lag_concatenation():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 8))
    X5, rows = structure_features(X, "X5")
    assert X5.shape == (46, 40)
    np.testing.assert_array_equal(rows, np.arange(4, 50))
    for k in rng.integers(4, 50, size=10):
        expected = np.concatenate([X[k - j] for j in range(5)])
        np.testing.assert_array_equal(X5[k - 4], expected)


def test_structure_unknown():
    with pytest.raises(DatasetError):
        structure_features(np.ones((5, 2)), "X9")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def test_minmax_midpoint():
    stats = normalize_fit(np.array([[2.0], [4.0]]))
    assert normalize_apply(np.array([[3.0]]), stats)[0, 0] == pytest.approx(0.5)


def test_normalize_roundtrip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 4)) * 7 + 3
    stats = normalize_fit(X)
    back = normalize_invert(normalize_apply(X, stats), stats)
    np.testing.assert_allclose(back, X, atol=1e-12)
    scaled = normalize_apply(X, stats)
    assert scaled.min() >= 0.0 and scaled.max() <= 1.0


def test_constant_column_maps_to_half():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    stats = normalize_fit(X)
    assert stats.constant[0] and not stats.constant[1]
    out = normalize_apply(X, stats)
    assert np.all(out[:, 0] == 0.5)


def test_extrapolation_outside_unit_interval_allowed():
    stats = normalize_fit(np.array([[0.0], [1.0]]))
    out = normalize_apply(np.array([[2.0], [-1.0]]), stats)
    assert out[0, 0] == pytest.approx(2.0)
    assert out[1, 0] == pytest.approx(-1.0)  # flagged by being outside [0, 1]


# ---------------------------------------------------------------------------
# Scenario codes
# ---------------------------------------------------------------------------


def test_dataset_code_roundtrip():
    for set_id in (1, 2, 3, 4):
        for noise in ("Y", "N"):
            for structure in ("X", "X5", "XS"):
                code = format_dataset_code(set_id, noise, structure)
                assert parse_dataset_code(code) == (set_id, noise, structure)


def test_result_code_roundtrip():
    assert format_result_code(1, "Y", "X5", "SSDKL", 10.0) == "1-Y-X5-S-10"
    assert parse_result_code("1-Y-X5-S-10") == (1, "Y", "X5", "SSDKL", 10.0)
    assert format_result_code(3, "N", "XS", "DKL") == "3-N-XS-D"
    assert parse_result_code("2-Y-X-G") == (2, "Y", "X", "GP", None)
    assert parse_result_code("1-Y-X-S-0.1") == (1, "Y", "X", "SSDKL", 0.1)


def test_result_code_rejects_malformed():
    for bad in ("1-Y-X-S", "1-Y-X-D-10", "5-Y-X-G", "1-Q-X-G", "1-Y-XQ-G", "1-Y-X-Z"):
        with pytest.raises(DatasetError):
            parse_result_code(bad)


# ---------------------------------------------------------------------------
# Test segments, subsampling, full pipeline
# ---------------------------------------------------------------------------


def test_test_segments_fraction_and_contiguity():
    mask = held_out_segments(10_000, seed=3, fraction=0.2, n_segments=4)
    assert mask.mean() == pytest.approx(0.2, abs=0.01)
    changes = np.diff(mask.astype(int))
    assert np.sum(changes == 1) <= 4  # at most 4 contiguous blocks
    np.testing.assert_array_equal(mask, held_out_segments(10_000, seed=3, fraction=0.2))
    assert not np.array_equal(mask, held_out_segments(10_000, seed=4, fraction=0.2))


def make_dataset(structure="X", set_id=4, seed=0, **kw):
    traj = synthetic_trajectory(n=3000)
    defaults = dict(label_scale=24.0, unlabeled_cap=500)
    defaults.update(kw)
    return build_dataset(traj, set_id, "Y", structure, seed=seed, **defaults)


def test_build_dataset_pools_disjoint_no_leakage():
    ds = make_dataset()
    ds.validate()
    labeled = set(ds.labeled_idx)
    unlabeled = set(ds.unlabeled_idx)
    test = set(ds.test_idx)
    assert not labeled & test and not unlabeled & test and not labeled & unlabeled
    assert ds.n_unlabeled > ds.m  # n >> m at any generated scale


def test_build_dataset_label_count_scaled():
    ds = make_dataset()
    # horizon 3000*10s = 8.33h, set 4, scale 24 -> 1000/1000h * 8.33h * 24
    expected = int(np.floor(1000 * (2999 * 10.0 / 3600.0) / 1000.0 * 24.0 + 0.5))
    assert ds.m == expected


def test_build_dataset_xs_pools_are_steady():
    ds = make_dataset(structure="XS", steady_threshold_frac=0.2)
    assert ds.steady_mask[ds.labeled_idx].all()
    assert ds.steady_mask[ds.unlabeled_idx].all()


def test_subsample_unlabeled_cap_and_determinism():
    ds = make_dataset(unlabeled_cap=None)
    capped = subsample_unlabeled(ds, 100, seed=1)
    assert capped.n_unlabeled == 100
    again = subsample_unlabeled(ds, 100, seed=1)
    np.testing.assert_array_equal(capped.unlabeled_idx, again.unlabeled_idx)
    assert subsample_unlabeled(ds, 10**9, seed=1) is ds


def test_subsample_statistics():
    ds = make_dataset(unlabeled_cap=None)
    sub = subsample_unlabeled(ds, 400, seed=2)
    full = ds.X[ds.unlabeled_idx]
    part = sub.X[sub.unlabeled_idx]
    sigma = full.std(axis=0) / np.sqrt(400)
    assert np.all(np.abs(part.mean(axis=0) - full.mean(axis=0)) < 3 * sigma + 1e-12)


def test_structure_inputs_x5_consistency():
    ds = make_dataset(structure="X")
    ds5 = structure_inputs(ds, "X5")
    assert ds5.X.shape[1] == 40
    direct, rows = structure_features(ds.X, "X5")
    np.testing.assert_array_equal(ds5.X, direct)
    # remapped labeled rows refer to the same times
    common = [i for i in ds.labeled_idx if i >= 4]
    np.testing.assert_array_equal(ds5.times[ds5.labeled_idx], ds.times[common])


def test_structure_inputs_xs_filters_pools():
    ds = make_dataset(structure="X", steady_threshold_frac=0.2)
    dss = structure_inputs(ds, "XS")
    assert dss.steady_mask[dss.labeled_idx].all()
    assert set(dss.labeled_idx) <= set(ds.labeled_idx)


def test_structure_inputs_xs_empty_steady_errors():
    ds = make_dataset(structure="X")
    ds.steady_mask[:] = False
    with pytest.raises(DatasetError, match="empty"):
        structure_inputs(ds, "XS")


def test_normalized_y_from_labeled_only():
    ds = make_dataset()
    raw_label_y = ds.y[ds.labeled_idx]
    assert raw_label_y.min() == pytest.approx(0.0, abs=1e-12)
    assert raw_label_y.max() == pytest.approx(1.0, abs=1e-12)
