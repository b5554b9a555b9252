"""Command-line front end: simulate, tune-aprbs, dataset, train, grid, report.

The grid command expands the full scenario product (label sets x noise tags
x input structures x models, with the alpha sweep applying to SSDKL only),
runs scenarios in parallel worker processes, and resumes idempotently: a
scenario whose fingerprint already appears in the output manifest is
skipped.  All randomness derives from the single master seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datagen, evaluate, excitation, regress, trajio, wo_model
from .config import ExperimentConfig, SET_LABEL_COUNTS, default_config_path, load_flowsheet, load_schedule

EXIT_OK = 0
EXIT_SCENARIO_FAILURES = 1
EXIT_CONFIG_ERROR = 2


# ---------------------------------------------------------------------------
# Scenario expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    set_id: int
    noise_tag: str
    structure: str
    kind: str
    alpha: float | None

    @property
    def code(self) -> str:
        return datagen.format_result_code(
            self.set_id, self.noise_tag, self.structure, self.kind, self.alpha
        )


def expand_grid(cfg: ExperimentConfig) -> list[ScenarioSpec]:
    """Cartesian scenario product; alpha varies only for SSDKL."""
    out = []
    for set_id in cfg.label_sets:
        for noise in cfg.noise_tags:
            for structure in cfg.structures:
                for kind in cfg.model_kinds:
                    if kind == "SSDKL":
                        for alpha in cfg.alphas:
                            out.append(ScenarioSpec(set_id, noise, structure, kind, alpha))
                    else:
                        out.append(ScenarioSpec(set_id, noise, structure, kind, None))
    return out


def scenario_fingerprint(spec: ScenarioSpec, cfg: ExperimentConfig) -> str:
    payload = json.dumps(
        {
            "code": spec.code,
            "trajectory": cfg.trajectory_id,
            "horizon_h": cfg.horizon_h,
            "output_dt": cfg.output_dt,
            "seed": cfg.master_seed,
            "label_scale": cfg.label_scale,
            "restarts": cfg.restarts,
            "max_iters": cfg.max_iters,
            "variance_batch": cfg.variance_batch,
            "unlabeled_cap": cfg.unlabeled_cap,
            "test_fraction": cfg.test_fraction,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Trajectory and dataset construction (cached on disk)
# ---------------------------------------------------------------------------


def _trajectory_path(cfg: ExperimentConfig, noise_tag: str) -> Path:
    return cfg.out_dir / f"traj_{cfg.trajectory_id}_{noise_tag}.bin"


def ensure_trajectory(cfg: ExperimentConfig, noise_tag: str, quiet=False) -> trajio.Trajectory:
    """Simulate (or load) the configured trajectory with/without APRBS."""
    path = _trajectory_path(cfg, noise_tag)
    if path.exists():
        return trajio.read_columnar(path)
    params = load_flowsheet(cfg.flowsheet_config)
    horizon = cfg.horizon_h * 3600.0
    schedule, aprbs_specs, tree = load_schedule(cfg.trajectory_id, params, horizon)
    op = params.operating_point
    nominal = {"F1": op.f1, "F2": op.f2}
    overlays = {}
    if noise_tag == "Y":
        for name, spec in aprbs_specs.items():
            overlays[name] = excitation.gen_aprbs(spec, horizon, nominal=nominal.get(name, 1.0))
    inputs = excitation.compose_trajectory(schedule, overlays, nominal)
    state = wo_model.find_steady_state(params)
    t0 = time.perf_counter()
    traj = wo_model.simulate(state, inputs, horizon, cfg.output_dt, params)
    # No wall-clock in the header: reruns must produce byte-identical files.
    traj.meta.update(
        {
            "trajectory_id": cfg.trajectory_id,
            "noise_tag": noise_tag,
            "master_seed": cfg.master_seed,
        }
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    trajio.write_columnar(traj, path)
    if not quiet:
        n_exc = sum(1 for e in traj.events if e["kind"] == "t4_excursion")
        print(
            f"[simulate] {cfg.trajectory_id}/{noise_tag}: {traj.n_rows} rows, "
            f"{n_exc} constraint events, {time.perf_counter() - t0:.1f}s"
        )
    return traj


def build_scenario_dataset(
    cfg: ExperimentConfig, traj: trajio.Trajectory, set_id: int, noise_tag: str, structure: str
) -> datagen.SensorDataset:
    return datagen.build_dataset(
        traj,
        set_id=set_id,
        noise_tag=noise_tag,
        structure=structure,
        seed=cfg.master_seed,
        label_scale=cfg.label_scale,
        unlabeled_cap=cfg.unlabeled_cap,
        test_fraction=cfg.test_fraction,
    )


# ---------------------------------------------------------------------------
# Single-scenario execution
# ---------------------------------------------------------------------------


def run_scenario(cfg: ExperimentConfig, spec: ScenarioSpec) -> evaluate.ScenarioResult:
    traj = ensure_trajectory(cfg, spec.noise_tag, quiet=True)
    dataset = build_scenario_dataset(cfg, traj, spec.set_id, spec.noise_tag, spec.structure)
    t0 = time.perf_counter()
    model, diag = regress.train(
        spec.kind,
        dataset,
        alpha=spec.alpha,
        restarts=cfg.restarts,
        seed=cfg.master_seed,
        max_iters=cfg.max_iters,
        variance_batch=cfg.variance_batch,
    )
    X_test, y_test = dataset.test()
    pred, _ = model.predict(X_test)
    test_rmse = evaluate.rmse(pred, y_test)
    scen_dir = cfg.out_dir / spec.code
    scen_dir.mkdir(parents=True, exist_ok=True)
    model_path = scen_dir / "model.npz"
    regress.save_model(model, model_path, extra_meta={"scenario": spec.code})
    result = evaluate.ScenarioResult(
        code=spec.code,
        trajectory_id=cfg.trajectory_id,
        model_kind=spec.kind,
        alpha=spec.alpha,
        set_id=spec.set_id,
        noise_tag=spec.noise_tag,
        structure=spec.structure,
        test_rmse=test_rmse,
        selection_rmse=diag["selection_rmse"],
        restart_rmses=[
            r.get("selection_rmse", float("nan")) for r in diag["restarts"]
        ],
        wall_time_s=time.perf_counter() - t0,
        seed=cfg.master_seed,
        prediction_path=str(model_path),
    )
    (scen_dir / "result.json").write_text(result.to_json())
    return result


def _scenario_worker(args):
    cfg_dict, spec = args
    cfg = ExperimentConfig(**cfg_dict)
    return run_scenario(cfg, spec)


def _cfg_to_dict(cfg: ExperimentConfig) -> dict:
    d = dict(cfg.__dict__)
    d["flowsheet_config"] = Path(d["flowsheet_config"])
    return d


# ---------------------------------------------------------------------------
# Grid orchestration with resume
# ---------------------------------------------------------------------------


def run_grid(cfg: ExperimentConfig, limit: int | None = None, quiet=False) -> tuple[list, list]:
    """Run the scenario grid; returns (results, failures).

    Completed scenarios (matching fingerprint in the manifest) are skipped.
    ``limit`` stops after that many newly computed scenarios (used to test
    resume behavior).
    """
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = cfg.out_dir / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    specs = expand_grid(cfg)
    # Simulate trajectories up front (single process, cached on disk).
    for noise in sorted({s.noise_tag for s in specs}):
        ensure_trajectory(cfg, noise, quiet=quiet)

    results: list[evaluate.ScenarioResult] = []
    pending: list[ScenarioSpec] = []
    for spec in specs:
        fp = scenario_fingerprint(spec, cfg)
        entry = manifest.get(spec.code)
        result_file = cfg.out_dir / spec.code / "result.json"
        if entry and entry.get("fingerprint") == fp and result_file.exists():
            results.append(evaluate.ScenarioResult.from_json(result_file.read_text()))
        else:
            pending.append(spec)
    if limit is not None:
        pending = pending[:limit]

    failures: list[tuple[str, str]] = []
    done_count = 0

    def record(spec, result):
        nonlocal done_count
        results.append(result)
        manifest[spec.code] = {
            "fingerprint": scenario_fingerprint(spec, cfg),
            "test_rmse": result.test_rmse,
        }
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        done_count += 1
        if not quiet:
            print(
                f"[grid] {done_count}/{len(pending)} {spec.code}: "
                f"rmse {result.test_rmse:.5f} ({result.wall_time_s:.0f}s)"
            )

    if cfg.workers <= 1:
        for spec in pending:
            try:
                record(spec, run_scenario(cfg, spec))
            except Exception as err:  # scenario failures are isolated
                failures.append((spec.code, str(err)))
                if not quiet:
                    print(f"[grid] FAILED {spec.code}: {err}", file=sys.stderr)
    else:
        cfg_dict = _cfg_to_dict(cfg)
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {
                pool.submit(_scenario_worker, (cfg_dict, spec)): spec for spec in pending
            }
            for fut in as_completed(futures):
                spec = futures[fut]
                try:
                    record(spec, fut.result())
                except Exception as err:
                    failures.append((spec.code, str(err)))
                    if not quiet:
                        print(f"[grid] FAILED {spec.code}: {err}", file=sys.stderr)

    results.sort(key=lambda r: r.code)
    _attach_relative(results)
    evaluate.write_results_csv(results, cfg.out_dir / "results.csv")
    return results, failures


def _attach_relative(results: list[evaluate.ScenarioResult]) -> None:
    baselines = {
        (r.set_id, r.noise_tag, r.structure): r.test_rmse
        for r in results
        if r.model_kind == "DKL"
    }
    for r in results:
        base = baselines.get((r.set_id, r.noise_tag, r.structure))
        if base and r.model_kind == "SSDKL":
            r.relative_to_dkl = 100.0 * (r.test_rmse - base) / base


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _load_experiment(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.horizon is not None:
        overrides["horizon_h"] = args.horizon
    if args.out is not None:
        overrides["out_dir"] = Path(args.out)
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig.default(**overrides)


def cmd_simulate(args) -> int:
    cfg = _load_experiment(args)
    for noise in cfg.noise_tags:
        traj = ensure_trajectory(cfg, noise)
        csv_path = _trajectory_path(cfg, noise).with_suffix(".csv")
        traj.to_csv(csv_path, stride=max(1, args.csv_stride))
        closure = traj.meta.get("max_mass_closure_error")
        print(
            f"{cfg.trajectory_id}/{noise}: horizon {cfg.horizon_h} h, "
            f"{traj.n_rows} rows, mass-closure err {closure:.2e}, -> {csv_path}"
        )
    return EXIT_OK


def cmd_tune_aprbs(args) -> int:
    cfg = _load_experiment(args)
    params = load_flowsheet(cfg.flowsheet_config)
    schedule, aprbs_specs, _ = load_schedule(cfg.trajectory_id, params)
    base = next(iter(aprbs_specs.values())) if aprbs_specs else excitation.AprbsSpec(0.1)
    probe = excitation.wo_quality_probe(params, probe_horizon=args.probe_hours * 3600.0)
    tuned, achieved = excitation.tune_amplitude(
        base.with_amplitude(args.start_amplitude), args.target, probe
    )
    print(
        f"target {args.target:.3%} -> amplitude bound {tuned.amplitude:.4f} "
        f"(achieved {achieved:.3%})"
    )
    return EXIT_OK


def cmd_dataset(args) -> int:
    cfg = _load_experiment(args)
    traj = ensure_trajectory(cfg, args.noise)
    ds = build_scenario_dataset(cfg, traj, args.set_id, args.noise, args.structure)
    out = cfg.out_dir / f"dataset_{ds.code}"
    out.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        out / "dataset.npz",
        X=ds.X,
        y=ds.y,
        times=ds.times,
        labeled_idx=ds.labeled_idx,
        unlabeled_idx=ds.unlabeled_idx,
        test_idx=ds.test_idx,
        steady_mask=ds.steady_mask,
    )
    with open(out / "labels.csv", "w") as fh:
        fh.write("time_s,y_normalized\n")
        for i in ds.labeled_idx:
            fh.write(f"{ds.times[i]!r},{ds.y[i]!r}\n")
    meta = {
        "code": ds.code,
        "m_labeled": ds.m,
        "n_unlabeled": ds.n_unlabeled,
        "n_test": int(ds.test_idx.size),
        "seeds": ds.seeds,
        "x_norm_lo": ds.x_norm.lo.tolist(),
        "x_norm_hi": ds.x_norm.hi.tolist(),
        "y_norm_lo": ds.y_norm.lo.tolist(),
        "y_norm_hi": ds.y_norm.hi.tolist(),
        "meta": ds.meta,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2))
    print(
        f"{ds.code}: m={ds.m} labels, n={ds.n_unlabeled} unlabeled, "
        f"{ds.test_idx.size} test rows -> {out}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_experiment(args)
    spec = ScenarioSpec(args.set_id, args.noise, args.structure, args.model, args.alpha)
    result = run_scenario(cfg, spec)
    print(f"{spec.code}: test RMSE {result.test_rmse:.6f} "
          f"(selection {result.selection_rmse:.6f}, {result.wall_time_s:.0f}s)")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _load_experiment(args)
    results, failures = run_grid(cfg, limit=args.limit)
    print(f"grid complete: {len(results)} results, {len(failures)} failures")
    for set_id in cfg.label_sets:
        for noise in cfg.noise_tags:
            try:
                table = evaluate.build_comparison_table(results, set_id, noise)
            except ValueError:
                continue
            print()
            print(evaluate.render_table(table))
    return EXIT_SCENARIO_FAILURES if failures else EXIT_OK


def cmd_report(args) -> int:
    results_path = Path(args.results_dir) / "results.csv"
    if not results_path.exists():
        print(f"no results at {results_path}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    results = evaluate.read_results_csv(results_path)
    if not results:
        print("results file is empty", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    out_dir = Path(args.results_dir)
    sets = sorted({r.set_id for r in results})
    noises = sorted({r.noise_tag for r in results})
    rendered_any = False
    for set_id in sets:
        for noise in noises:
            try:
                table = evaluate.build_comparison_table(results, set_id, noise)
            except ValueError:
                continue
            rendered_any = True
            print()
            print(evaluate.render_table(table))
            evaluate.table_to_csv(table, out_dir / f"table_set{set_id}_{noise}.csv")
    if not rendered_any:
        # No DKL baseline anywhere: fall back to a plain RMSE listing.
        print(f"{'scenario':<16}{'test_rmse':>12}")
        for r in results:
            print(f"{r.code:<16}{r.test_rmse:>12.5f}")
    alphas, set_ids, matrix = evaluate.frequency_alpha_matrix(results)
    if np.isfinite(matrix).any():
        print("\nSSDKL-XS RMSE x 100 (rows alpha, columns set):")
        header = "        " + "".join(f"{s:>10}" for s in set_ids)
        print(header)
        for a, row in zip(alphas, matrix):
            print(f"a={a:<6g}" + "".join(f"{v:>10.3f}" if np.isfinite(v) else f"{'-':>10}" for v in row))
        np.savetxt(out_dir / "frequency_alpha_matrix.csv", matrix, delimiter=",")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="softsense",
        description="Williams-Otto soft-sensor experimentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=False):
        p.add_argument("--config", help="experiment config YAML")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--horizon", type=float, default=None, help="horizon override (hours)")
        p.add_argument("--out", default=None, help="output directory")
        if workers:
            p.add_argument("--workers", type=int, default=None, help="parallel scenario workers")

    p = sub.add_parser("simulate", help="simulate the configured trajectories")
    common(p)
    p.add_argument("--csv-stride", type=int, default=10)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune-aprbs", help="tune APRBS amplitude to a quality fluctuation")
    common(p)
    p.add_argument("--target", type=float, default=0.033)
    p.add_argument("--start-amplitude", type=float, default=0.1)
    p.add_argument("--probe-hours", type=float, default=4.0)
    p.set_defaults(func=cmd_tune_aprbs)

    p = sub.add_parser("dataset", help="build one dataset")
    common(p)
    p.add_argument("--set-id", type=int, required=True, choices=sorted(SET_LABEL_COUNTS))
    p.add_argument("--noise", required=True, choices=["Y", "N"])
    p.add_argument("--structure", required=True, choices=["X", "X5", "XS"])
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a single scenario")
    common(p)
    p.add_argument("--set-id", type=int, required=True, choices=sorted(SET_LABEL_COUNTS))
    p.add_argument("--noise", required=True, choices=["Y", "N"])
    p.add_argument("--structure", required=True, choices=["X", "X5", "XS"])
    p.add_argument("--model", required=True, choices=["SSDKL", "DKL", "GP"])
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run the full scenario grid")
    common(p, workers=True)
    p.add_argument("--limit", type=int, default=None, help="stop after N new scenarios")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="render tables from a results directory")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
