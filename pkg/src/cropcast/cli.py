"""Batch front end: synth | features | train | eval | attribute | project | report.

Each subcommand is one pipeline stage writing artifacts under
``<out>/<stage>/`` plus a ``stage.json`` carrying the cumulative config
hash, so downstream stages detect missing or stale inputs. Heavy imports
happen inside the handlers: ``--threads`` must cap BLAS pools before numpy
loads.

Exit codes: 0 success, 2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

from .config import (STAGE_SECTIONS, UPSTREAM, load_config, stage_hash)
from .errors import ConfigError, CropcastError, DataError

# fixed salts so every stage draws an independent, reproducible stream
_STAGE_SALTS = {"synth": 101, "train": 103, "attribute": 105}


def _stage_dir(cfg: dict, stage: str) -> Path:
    # wipe, don't merge: the directory always reflects exactly one run,
    # and an interrupted re-run reads as missing rather than complete
    d = Path(cfg["out"]) / stage
    if d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True)
    return d


def _mark_done(cfg: dict, stage: str) -> None:
    payload = {
        "stage": stage,
        "hash": stage_hash(cfg, stage),
        "sections": {s: cfg[s] for s in STAGE_SECTIONS[stage]},
        "seed": cfg["seed"],
    }
    (Path(cfg["out"]) / stage / "stage.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n",
        encoding="utf-8")


def _check_stage(cfg: dict, stage: str) -> None:
    """Require ``stage`` to have completed under the current config."""
    marker = Path(cfg["out"]) / stage / "stage.json"
    if not marker.exists():
        raise DataError(
            f"missing artifacts for stage '{stage}' under {cfg['out']}; "
            f"run `cropcast {stage}` first")
    meta = json.loads(marker.read_text(encoding="utf-8"))
    if meta.get("hash") != stage_hash(cfg, stage):
        raise ConfigError(
            f"stale artifacts for stage '{stage}': the config governing it "
            f"changed since it ran; re-run `cropcast {stage}`")


def _require_upstream(cfg: dict, stage: str) -> None:
    upstream = UPSTREAM[stage]
    if upstream is not None:
        _check_stage(cfg, upstream)


def _stage_seeds(cfg: dict, stage: str, n: int):
    import numpy as np
    ss = np.random.SeedSequence([cfg["seed"], _STAGE_SALTS[stage]])
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64)]


def _grid_spec(cfg: dict):
    from .grid import GridSpec
    g = cfg["grid"]
    return GridSpec(g["width"], g["height"], g["lon_min"], g["lat_max"],
                    g["cell"])


# ---------------------------------------------------------------------------
# Feature stacks: all 162 planes in one blob + manifest
# ---------------------------------------------------------------------------

def _write_stack(names, values, spec, stem) -> None:
    import numpy as np
    stem = Path(stem)
    np.ascontiguousarray(values, dtype="<f8").tofile(stem.with_suffix(".f64"))
    meta = {"names": list(names), "planes": len(names), "dtype": "f64",
            **spec.to_dict()}
    stem.with_suffix(".json").write_text(
        json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")


def _read_stack(stem):
    import numpy as np

    from .grid import spec_from_manifest
    stem = Path(stem)
    man_path = stem.with_suffix(".json")
    if not man_path.exists():
        raise DataError(f"missing feature stack {man_path}")
    meta = json.loads(man_path.read_text(encoding="utf-8"))
    spec = spec_from_manifest(meta)
    names = tuple(meta["names"])
    values = np.fromfile(stem.with_suffix(".f64"), dtype="<f8")
    want = len(names) * spec.n_pixels
    if values.size != want:
        raise DataError(f"feature stack {stem} has wrong size")
    return names, values.reshape(len(names), *spec.shape), spec


def _stack_rasters(names, values, spec) -> dict:
    from .grid import Raster
    return {name: Raster(spec, values[k]) for k, name in enumerate(names)}


# ---------------------------------------------------------------------------
# Climate feature computation over memmapped daily series
# ---------------------------------------------------------------------------

def _fit_thresholds_chunked(baseline_dir: Path, chunk: int):
    """Per-pixel thresholds fit on the baseline series, chunk by chunk."""
    import numpy as np

    from .climate import DAILY_VARIABLES, fit_thresholds
    from .synth import read_series
    series = {var: read_series(baseline_dir / var)[0]
              for var in DAILY_VARIABLES}
    n = series["tmax"].shape[1]
    parts = []
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        block = {var: np.asarray(series[var][:, sl], dtype=np.float64)
                 for var in DAILY_VARIABLES}
        parts.append(fit_thresholds(block))
    return parts


def _save_thresholds(parts, out_path: Path) -> None:
    import numpy as np
    cat = lambda f: np.concatenate([f(p) for p in parts], axis=-1)
    np.savez(out_path,
             tasmax_p95=cat(lambda p: p.tasmax_p95),
             tasmin_p5=cat(lambda p: p.tasmin_p5),
             precip_p95=cat(lambda p: p.precip_p95),
             wind_p95=cat(lambda p: p.wind_p95),
             spi_q_zero=cat(lambda p: p.spi.q_zero),
             spi_alpha=cat(lambda p: p.spi.alpha),
             spi_theta=cat(lambda p: p.spi.theta))


def _load_thresholds(path: Path):
    import numpy as np
    if not path.exists():
        raise DataError(f"missing thresholds file {path}; "
                        "run `cropcast features` first")
    return np.load(path)


def _thresholds_slice(arrays, sl):
    from .climate import ClimateThresholds, SpiParams
    spi = SpiParams(q_zero=arrays["spi_q_zero"][:, sl],
                    alpha=arrays["spi_alpha"][:, sl],
                    theta=arrays["spi_theta"][:, sl])
    return ClimateThresholds(tasmax_p95=arrays["tasmax_p95"][:, sl],
                             tasmin_p5=arrays["tasmin_p5"][:, sl],
                             precip_p95=arrays["precip_p95"][:, sl],
                             wind_p95=arrays["wind_p95"][:, sl],
                             spi=spi)


def _climate_features(target_dir: Path, thresholds, spec,
                      chunk: int):
    """(121, H, W) climate feature planes for one run directory."""
    import numpy as np

    from .climate import (CLIMATE_FEATURE_NAMES, DAILY_VARIABLES,
                          climate_feature_block)
    from .synth import read_series
    series = {}
    for var in DAILY_VARIABLES:
        data, sspec, _ = read_series(target_dir / var)
        if sspec != spec:
            raise DataError(f"series {target_dir / var} is on a different "
                            "grid than the run config")
        series[var] = data
    n = spec.n_pixels
    out = np.empty((len(CLIMATE_FEATURE_NAMES), n))
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        block = {var: np.asarray(series[var][:, sl], dtype=np.float64)
                 for var in DAILY_VARIABLES}
        out[:, sl] = climate_feature_block(block, _thresholds_slice(
            thresholds, sl))
    return CLIMATE_FEATURE_NAMES, out.reshape(-1, *spec.shape)


def _scenario_table(cfg: dict, run_name: str, terrain_planes):
    """Unlabeled scaled-ready feature table for one future run."""
    from .dataset import assemble
    out = Path(cfg["out"])
    run_dir = out / "synth" / "future" / run_name
    if not (run_dir / "tmean.json").exists():
        raise DataError(f"no synthetic run {run_name!r} under "
                        f"{out / 'synth' / 'future'}; re-run `cropcast synth`"
                        " with it configured")
    spec = _grid_spec(cfg)
    thresholds = _load_thresholds(out / "features" / "thresholds.npz")
    names, values = _climate_features(run_dir, thresholds, spec,
                                      cfg["features"]["chunk"])
    rasters = _stack_rasters(names, values, spec)
    rasters.update(terrain_planes)
    return assemble(rasters, None)


# ---------------------------------------------------------------------------
# Stage commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: dict) -> None:
    from .synth import generate_world
    spec = _grid_spec(cfg)
    out = _stage_dir(cfg, "synth")
    s = cfg["synth"]
    seed = _stage_seeds(cfg, "synth", 1)[0]
    manifest = generate_world(
        out, spec, seed,
        baseline_years=s["baseline_years"],
        future_years=s["future_years"],
        class_proportions=tuple(s["class_proportions"]),
        climate_models=tuple(s["climate_models"]),
        ssps=tuple(s["ssps"]),
        periods=tuple(s["periods"]),
        label_noise=s["label_noise"],
        include_futures=s["include_futures"])
    _mark_done(cfg, "synth")
    print(f"synth: wrote {len(manifest['runs'])} future runs and "
          f"{spec.n_pixels} labeled pixels to {out}")


def cmd_features(cfg: dict) -> None:
    import numpy as np

    from .dataset import FEATURE_COLUMNS
    from .grid import read_raster
    from .terrain import terrain_feature_stack
    _require_upstream(cfg, "features")
    out = _stage_dir(cfg, "features")
    synth_dir = Path(cfg["out"]) / "synth"
    spec = _grid_spec(cfg)
    chunk = cfg["features"]["chunk"]

    parts = _fit_thresholds_chunked(synth_dir / "historical", chunk)
    _save_thresholds(parts, out / "thresholds.npz")
    thresholds = _load_thresholds(out / "thresholds.npz")

    clim_names, clim_values = _climate_features(
        synth_dir / "historical", thresholds, spec, chunk)
    dem = read_raster(synth_dir / "dem")
    terrain = terrain_feature_stack(dem)

    planes = {name: clim_values[k] for k, name in enumerate(clim_names)}
    planes.update({name: r.values for name, r in terrain.items()})
    stacked = np.stack([planes[name] for name in FEATURE_COLUMNS])
    _write_stack(FEATURE_COLUMNS, stacked, spec, out / "historical")
    _mark_done(cfg, "features")
    print(f"features: wrote {len(FEATURE_COLUMNS)} planes to {out}")


def cmd_train(cfg: dict) -> None:
    from .dataset import (apply_scaler, assemble, fit_scaler, split,
                          to_sequences, undersample, write_table)
    from .grid import read_raster
    from .models import build_model, save_model, train
    _require_upstream(cfg, "train")
    _check_stage(cfg, "synth")
    out = _stage_dir(cfg, "train")
    names, values, spec = _read_stack(Path(cfg["out"]) / "features"
                                      / "historical")
    mask = read_raster(Path(cfg["out"]) / "synth" / "mask")
    table = assemble(_stack_rasters(names, values, spec), mask)

    ds = cfg["dataset"]
    tr = cfg["train"]
    seeds = _stage_seeds(cfg, "train", 3 + 2 * len(tr["models"]))
    if ds["undersample"]:
        table = undersample(table, seeds[0])
    train_tbl, test_tbl = split(table, ds["train_frac"], seeds[1])
    scaler = fit_scaler(train_tbl)
    train_s = apply_scaler(train_tbl, scaler)
    test_s = apply_scaler(test_tbl, scaler)
    if ds["paper_protocol"]:
        # validation carved from the test split, as published
        fit_tbl = train_s
        _, val_tbl = split(test_s, 1.0 - ds["val_frac"], seeds[2])
    else:
        fit_tbl, val_tbl = split(train_s, 1.0 - ds["val_frac"], seeds[2])

    scaler.to_json(out / "scaler.json")
    write_table(test_tbl, out / "test.csv")
    write_table(train_tbl, out / "train.csv")

    for k, kind in enumerate(tr["models"]):
        model = build_model(kind, seed=seeds[3 + 2 * k],
                            n_features=len(names),
                            mlp_hidden=tuple(tr["mlp_hidden"]),
                            lstm_hidden=tr["lstm_hidden"])
        Xf = to_sequences(fit_tbl) if kind == "lstm" else fit_tbl.X
        Xv = to_sequences(val_tbl) if kind == "lstm" else val_tbl.X
        result = train(model, Xf, fit_tbl.labels, Xv, val_tbl.labels,
                       epochs=tr["epochs"], batch_size=tr["batch_size"],
                       lr=tr["lr"], patience=tr["patience"],
                       seed=seeds[4 + 2 * k])
        save_model(model, out / kind, scaler_ref="scaler.json")
        (out / f"history_{kind}.json").write_text(json.dumps({
            "best_epoch": result.best_epoch,
            "best_val_f1": result.best_val_f1,
            "stopped_early": result.stopped_early,
            "history": result.history,
        }, indent=1) + "\n", encoding="utf-8")
        print(f"train[{kind}]: best val macro-F1 "
              f"{result.best_val_f1:.4f} at epoch {result.best_epoch}")
    _mark_done(cfg, "train")


def _load_test_split(cfg: dict):
    from .dataset import ScalerParams, apply_scaler, read_table
    train_dir = Path(cfg["out"]) / "train"
    test = read_table(train_dir / "test.csv")
    scaler = ScalerParams.from_json(train_dir / "scaler.json")
    return apply_scaler(test, scaler), scaler


def cmd_eval(cfg: dict) -> None:
    from .dataset import to_sequences
    from .metrics import evaluate
    from .models import load_model
    _require_upstream(cfg, "eval")
    out = _stage_dir(cfg, "eval")
    test_s, _ = _load_test_split(cfg)
    lines = []
    for kind in cfg["train"]["models"]:
        model = load_model(Path(cfg["out"]) / "train" / kind)
        X = to_sequences(test_s) if kind == "lstm" else test_s.X
        report = evaluate(test_s.labels, model.predict_proba(X))
        report.to_json(out / f"{kind}.json")
        lines.append(f"== {kind} ==")
        lines.append(report.to_text())
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    _mark_done(cfg, "eval")


def cmd_attribute(cfg: dict) -> None:
    from .attribution import permutation_importance, region_attribution
    from .dataset import (SEQUENCE_CHANNELS, apply_scaler, assemble,
                          to_sequences)
    from .models import load_model
    from .terrain import TERRAIN_FEATURE_NAMES
    _require_upstream(cfg, "attribute")
    _check_stage(cfg, "synth")
    _check_stage(cfg, "features")
    out = _stage_dir(cfg, "attribute")
    at = cfg["attribute"]
    model = load_model(Path(cfg["out"]) / "train" / at["model"])
    test_s, scaler = _load_test_split(cfg)
    sequence = model.kind == "lstm"
    X = to_sequences(test_s) if sequence else test_s.X
    names = SEQUENCE_CHANNELS if sequence else test_s.columns
    seeds = _stage_seeds(cfg, "attribute", 1)
    report = permutation_importance(model, X, test_s.labels, names,
                                    n_reps=at["n_reps"], seed=seeds[0])
    report.to_csv(out / "importance.csv")
    report.to_json(out / "importance.json")
    top = report.ranked()[:5]
    print("attribute: top channels "
          + ", ".join(f"{n}={v:.4f}" for n, v in top))

    if at["regions"]:
        spec = _grid_spec(cfg)
        stack_names, stack_values, _ = _read_stack(
            Path(cfg["out"]) / "features" / "historical")
        rasters = _stack_rasters(stack_names, stack_values, spec)
        baseline_s = apply_scaler(assemble(rasters, None), scaler)
        terrain_planes = {name: r for name, r in rasters.items()
                          if name in TERRAIN_FEATURE_NAMES}
        run = at["scenario"]
        run_name = (f"{run['climate_model']}_{run['ssp']}_{run['period']}")
        scenario = apply_scaler(_scenario_table(cfg, run_name,
                                                terrain_planes), scaler)
        for region in at["regions"]:
            try:
                result = region_attribution(
                    model, tuple(region["rect"]), scenario, baseline_s,
                    int(region["class"]), spec, steps=at["steps"])
            except DataError as exc:
                raise DataError(f"region {region['name']!r}: {exc}")
            result.to_csv(out / f"region_{region['name']}.csv")
            result.to_json(out / f"region_{region['name']}.json")
            print(f"attribute[{region['name']}]: mean delta logit "
                  f"{result.mean_delta_logit:+.4f} over "
                  f"{result.n_pixels} pixels")
    _mark_done(cfg, "attribute")


def cmd_project(cfg: dict) -> None:
    from .dataset import apply_scaler, to_sequences
    from .grid import read_raster
    from .models import load_model
    from .scenario import (ScenarioKey, delta_heatmap, ensemble_average,
                           probability_maps_from_rows, trajectory_report)
    from .terrain import TERRAIN_FEATURE_NAMES
    _require_upstream(cfg, "project")
    _check_stage(cfg, "synth")
    _check_stage(cfg, "features")
    out = _stage_dir(cfg, "project")
    manifest_path = Path(cfg["out"]) / "synth" / "MANIFEST.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if not manifest["runs"]:
        raise DataError("the synthetic world has no future runs; re-run "
                        "`cropcast synth` with include_futures enabled")
    model = load_model(Path(cfg["out"]) / "train" / cfg["project"]["model"])
    _, scaler = _load_test_split(cfg)
    spec = _grid_spec(cfg)
    stack_names, stack_values, _ = _read_stack(
        Path(cfg["out"]) / "features" / "historical")
    terrain_planes = {
        name: r for name, r in _stack_rasters(
            stack_names, stack_values, spec).items()
        if name in TERRAIN_FEATURE_NAMES}
    mask = read_raster(Path(cfg["out"]) / "synth" / "mask")

    projections = {}
    for run in manifest["runs"]:
        key = ScenarioKey(run["climate_model"], run["ssp"], run["period"])
        table = apply_scaler(_scenario_table(cfg, run["name"],
                                             terrain_planes), scaler)
        X = to_sequences(table) if model.kind == "lstm" else table.X
        proba = model.predict_proba(X)
        maps = probability_maps_from_rows(spec, proba, table.pix, key)
        maps.validate()
        maps.write(out / f"probs_{key.slug()}")
        projections[key] = maps
        print(f"project[{key.slug()}]: wrote class probability maps")

    groups = {}
    for key, maps in projections.items():
        groups.setdefault((key.ssp, key.period), []).append(maps)
    for (ssp, period), members in sorted(groups.items()):
        ens = members[0] if len(members) == 1 else ensemble_average(members)
        ens.write(out / f"ensemble_{ssp}_{period}")
        delta = delta_heatmap(ens, mask)
        delta.write(out / f"delta_{ssp}_{period}")
    frame = trajectory_report(mask, projections)
    frame.to_csv(out / "trajectory.csv", index=False)
    _mark_done(cfg, "project")
    print(f"project: {len(projections)} runs, {len(groups)} ensembles")


def cmd_report(cfg: dict) -> None:
    import pandas as pd

    from .attribution import ImportanceReport
    from .grid import read_raster
    from .render import (render_class_map, render_delta, render_importance,
                         render_trajectory)
    from .scenario import ProbabilityMaps
    _require_upstream(cfg, "report")
    _check_stage(cfg, "synth")
    out = _stage_dir(cfg, "report")
    project_dir = Path(cfg["out"]) / "project"
    rep = cfg["report"]
    written = []

    mask = read_raster(Path(cfg["out"]) / "synth" / "mask")
    written.append(render_class_map(mask, out / "mask.png",
                                    title="observed classes"))

    manifest = json.loads((Path(cfg["out"]) / "synth" / "MANIFEST.json")
                          .read_text(encoding="utf-8"))
    pairs = sorted({(r["ssp"], r["period"]) for r in manifest["runs"]})
    for ssp, period in pairs:
        ens = ProbabilityMaps.read(project_dir / f"ensemble_{ssp}_{period}",
                                   "ensemble")
        for cls in rep["delta_classes"]:
            delta = read_raster(project_dir
                                / f"delta_{ssp}_{period}_class{cls}")
            written.append(render_delta(
                delta, out / f"delta_{ssp}_{period}_class{cls}.png",
                title=f"class {cls} change, {ssp} {period}"))
        written.append(render_class_map(
            ens.argmax_classes(), out / f"classes_{ssp}_{period}.png",
            title=f"projected classes, {ssp} {period}"))

    frame = pd.read_csv(project_dir / "trajectory.csv",
                        dtype={"period": str})
    written.append(render_trajectory(frame, out / "trajectory.png",
                                     title="class counts by period"))

    importance_path = Path(cfg["out"]) / "attribute" / "importance.json"
    if importance_path.exists():
        _check_stage(cfg, "attribute")
        report = ImportanceReport.from_json(importance_path)
        written.append(render_importance(report, out / "importance.png",
                                         top=rep["top_features"]))
    _mark_done(cfg, "report")
    print(f"report: wrote {len(written)} figures to {out}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "attribute": cmd_attribute,
    "project": cmd_project,
    "report": cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cropcast",
        description="Land-suitability pipeline: synthetic data, features, "
                    "training, evaluation, attribution, projection, report.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file (defaults apply otherwise)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the run seed")
        p.add_argument("--threads", type=int, default=None,
                       help="cap numeric thread pools")
        p.add_argument("--out", type=str, default=None,
                       help="override the output directory")
    return parser


def _cap_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)
    os.environ.setdefault("NUMBA_NUM_THREADS", str(n))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = {"seed": args.seed, "threads": args.threads,
                     "out": args.out}
        # capping must precede the numpy import inside the handlers
        if args.threads is not None:
            _cap_threads(args.threads)
        cfg = load_config(args.config, overrides)
        if cfg["threads"] is not None and args.threads is None:
            _cap_threads(cfg["threads"])
        _COMMANDS[args.command](cfg)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CropcastError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
