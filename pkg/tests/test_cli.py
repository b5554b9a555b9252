"""CLI and grid orchestration: expansion combinatorics, resume, exit codes."""

import json
import os
from pathlib import Path

import numpy as np
import pytest
import yaml

from softsense import cli
from softsense.cli import ScenarioSpec, expand_grid, run_grid, scenario_fingerprint
from softsense.config import ConfigError, ExperimentConfig
from softsense.evaluate import read_results_csv
from softsense.trajio import read_columnar


def tiny_config(tmp_path, **overrides):
    cfg = dict(
        trajectory_id="wo1",
        horizon_h=2.0,
        output_dt=10.0,
        label_sets=[4],
        noise_tags=["N"],
        structures=["X"],
        model_kinds=["GP", "DKL"],
        restarts=2,
        master_seed=7,
        max_iters=60,
        label_scale=20.0,
        out_dir=str(tmp_path / "run"),
        workers=1,
    )
    cfg.update(overrides)
    return ExperimentConfig.default(**cfg)


# ---------------------------------------------------------------------------
# Expansion
# ---------------------------------------------------------------------------


def test_grid_expansion_subset_combinatorics(tmp_path):
    cfg = tiny_config(
        tmp_path,
        label_sets=[1, 3],
        noise_tags=["Y"],
        structures=["X", "XS"],
        model_kinds=["SSDKL", "DKL", "GP"],
    )
    specs = expand_grid(cfg)
    assert len(specs) == 2 * 1 * 2 * (3 + 1 + 1) == 20
    assert len({s.code for s in specs}) == 20


def test_full_table_expansion_is_120(tmp_path):
    cfg = tiny_config(
        tmp_path,
        label_sets=[1, 2, 3, 4],
        noise_tags=["Y", "N"],
        structures=["X", "XS", "X5"],
        model_kinds=["SSDKL", "DKL", "GP"],
    )
    specs = expand_grid(cfg)
    assert len(specs) == 120
    assert len({s.code for s in specs}) == 120
    # alpha varies only for SSDKL
    assert sum(1 for s in specs if s.kind == "SSDKL") == 72
    assert all(s.alpha is None for s in specs if s.kind != "SSDKL")


def test_fingerprint_sensitive_to_settings(tmp_path):
    cfg = tiny_config(tmp_path)
    spec = expand_grid(cfg)[0]
    fp1 = scenario_fingerprint(spec, cfg)
    cfg2 = tiny_config(tmp_path, master_seed=8)
    assert scenario_fingerprint(spec, cfg2) != fp1


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------


def test_config_validation_errors(tmp_path):
    with pytest.raises(ConfigError):
        tiny_config(tmp_path, label_sets=[9])
    with pytest.raises(ConfigError):
        tiny_config(tmp_path, noise_tags=["Q"])
    with pytest.raises(ConfigError):
        tiny_config(tmp_path, structures=["X7"])
    with pytest.raises(ConfigError):
        tiny_config(tmp_path, model_kinds=["SSDKL"], alphas=[])


def test_config_from_file_and_env_out(tmp_path, monkeypatch):
    cfg_file = tmp_path / "exp.yaml"
    cfg_file.write_text(
        yaml.safe_dump(
            dict(trajectory_id="wo2", horizon_h=3.0, label_sets=[2], master_seed=5)
        )
    )
    monkeypatch.setenv("SOFTSENSE_OUT", str(tmp_path / "envout"))
    cfg = ExperimentConfig.from_file(cfg_file)
    assert cfg.trajectory_id == "wo2"
    assert cfg.master_seed == 5
    assert cfg.out_dir == tmp_path / "envout"
    # explicit override beats file and env
    cfg = ExperimentConfig.from_file(cfg_file, out_dir=tmp_path / "explicit")
    assert cfg.out_dir == tmp_path / "explicit"


def test_missing_flowsheet_config(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig(flowsheet_config=tmp_path / "nope.yaml")


# ---------------------------------------------------------------------------
# Grid execution, resume, failure isolation (slow-ish: real tiny simulations)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def grid_run(tmp_path_factory):
    """One uninterrupted tiny grid run, reused by several tests."""
    tmp = tmp_path_factory.mktemp("grid")
    cfg = tiny_config(tmp)
    results, failures = run_grid(cfg, quiet=True)
    return cfg, results, failures


def test_grid_completes(grid_run):
    cfg, results, failures = grid_run
    assert failures == []
    assert {r.code for r in results} == {"4-N-X-G", "4-N-X-D"}
    assert (cfg.out_dir / "results.csv").exists()
    assert (cfg.out_dir / "manifest.json").exists()


def test_grid_resume_skips_completed(grid_run):
    cfg, results, _ = grid_run
    manifest_before = (cfg.out_dir / "manifest.json").read_text()
    results2, failures2 = run_grid(cfg, quiet=True)
    assert failures2 == []
    assert {r.code for r in results2} == {r.code for r in results}
    # nothing recomputed: identical RMSEs from the persisted results
    assert {r.code: r.test_rmse for r in results2} == {
        r.code: r.test_rmse for r in results
    }
    assert (cfg.out_dir / "manifest.json").read_text() == manifest_before


def test_interrupted_grid_resumes_to_identical_results(grid_run, tmp_path):
    cfg_full, results_full, _ = grid_run
    cfg = tiny_config(tmp_path)
    partial, _ = run_grid(cfg, limit=1, quiet=True)
    assert len(partial) == 1
    resumed, failures = run_grid(cfg, quiet=True)
    assert failures == []
    assert {r.code: r.test_rmse for r in resumed} == {
        r.code: r.test_rmse for r in results_full
    }


def test_scenario_failures_are_isolated(tmp_path):
    # Set 1 at 2 h and scale 20 yields round(10*2/1000*20) = 0 labels: that
    # scenario fails, the Set-4 scenario still completes.
    cfg = tiny_config(tmp_path, label_sets=[1, 4], model_kinds=["GP"])
    results, failures = run_grid(cfg, quiet=True)
    assert len(results) == 1 and results[0].set_id == 4
    assert len(failures) == 1 and failures[0][0].startswith("1-")


def test_simulate_command_determinism(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    for out in (out1, out2):
        rc = cli.main(
            [
                "simulate",
                "--out",
                str(out),
                "--horizon",
                "1",
                "--seed",
                "3",
                "--csv-stride",
                "50",
            ]
        )
        assert rc == 0
    t1 = (out1 / "traj_wo1_Y.bin").read_bytes()
    t2 = (out2 / "traj_wo1_Y.bin").read_bytes()
    assert t1 == t2  # byte-identical rerun
    traj = read_columnar(out1 / "traj_wo1_N.bin")
    assert traj.meta["max_mass_closure_error"] < 1e-8


def test_dataset_command(tmp_path):
    rc = cli.main(
        [
            "dataset",
            "--out",
            str(tmp_path),
            "--horizon",
            "2",
            "--seed",
            "5",
            "--set-id",
            "4",
            "--noise",
            "N",
            "--structure",
            "X",
        ]
    )
    assert rc == 0
    meta = json.loads((tmp_path / "dataset_4-N-X" / "metadata.json").read_text())
    assert meta["code"] == "4-N-X"
    assert meta["m_labeled"] > 0
    assert (tmp_path / "dataset_4-N-X" / "labels.csv").exists()


def test_report_command(grid_run, capsys):
    cfg, _, _ = grid_run
    rc = cli.main(["report", str(cfg.out_dir)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "4-N-X" in out or "DKL" in out


def test_report_missing_results(tmp_path, capsys):
    rc = cli.main(["report", str(tmp_path)])
    assert rc == 2


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("label_sets: [9]\n")
    rc = cli.main(["grid", "--config", str(bad)])
    assert rc == 2
