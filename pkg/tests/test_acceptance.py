"""Acceptance checklist for the whole package, one guarantee per test.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantities, so ``pytest tests/test_acceptance.py -v -s`` reads as a
checklist. The heavyweight fixture is a full 128x128 synthetic run driven
through the command-line stages exactly as a user would run them.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from cropcast import terrain
from cropcast.attribution import integrated_gradients, permutation_importance
from cropcast.cli import main as cli_main
from cropcast.climate import MONTH_LENGTHS, fit_spi, spi_monthly
from cropcast.dataset import (SEQUENCE_CHANNELS, FeatureTable, ScalerParams,
                              apply_scaler, read_table, to_sequences,
                              undersample)
from cropcast.grid import GridSpec, Raster, read_raster
from cropcast.metrics import average_precision, confusion, scores
from cropcast.models import Logreg, Lstm, Mlp, load_model
from cropcast.scenario import ProbabilityMaps, delta_heatmap
from cropcast.synth import (CAUSAL_CHANNELS, NOISE_CHANNEL, generate_world,
                            plant_labels)

CAUSAL = tuple(CAUSAL_CHANNELS)


def _report(label: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}", flush=True)
    assert ok, f"{label}: {detail}"


# ---------------------------------------------------------------------------
# Full-scale run shared by the model-facing checks
# ---------------------------------------------------------------------------

BIG_CFG = {
    "seed": 0,
    "synth": {"future_years": 2, "periods": ["2040-2050"],
              "label_noise": 0.02},
    "train": {"epochs": 100, "patience": 20},
    "project": {"model": "lstm"},
}


@pytest.fixture(scope="session")
def big_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    out = root / "run"
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(BIG_CFG), encoding="utf-8")
    times = {}
    for stage in ("synth", "features", "train", "eval", "project"):
        t0 = time.perf_counter()
        rc = cli_main([stage, "--config", str(cfg), "--out", str(out)])
        times[stage] = time.perf_counter() - t0
        assert rc == 0, f"stage {stage} failed"
    return {"out": out, "times": times}


def _test_split(big_run, scaled: bool) -> FeatureTable:
    table = read_table(big_run["out"] / "train" / "test.csv")
    if scaled:
        scaler = ScalerParams.from_json(big_run["out"] / "train"
                                        / "scaler.json")
        table = apply_scaler(table, scaler)
    return table


# ---------------------------------------------------------------------------
# Class bookkeeping
# ---------------------------------------------------------------------------

def test_skewed_class_shares_are_reproduced(tmp_path):
    # shares as lopsided as a real cropland survey: the dominant class is
    # ~86x the rarest one
    raw = np.array([0.8601, 0.01076, 0.04297, 0.08602])
    target = raw / raw.sum()
    spec = GridSpec(64, 64, 60.0, 64.0, 0.0625)
    generate_world(tmp_path / "w", spec, seed=21, baseline_years=4,
                   class_proportions=tuple(target), include_futures=False)
    mask = read_raster(tmp_path / "w" / "mask")
    got = np.array([(mask.values == c).sum() for c in range(4)],
                   dtype=np.float64) / spec.n_pixels
    worst = np.abs(got - target).max()
    _report("skewed class shares", worst <= 0.02,
            f"max |share error| {worst:.5f} (tolerance 0.02) over "
            f"{spec.n_pixels} pixels")


def test_undersampling_caps_majority_class_exactly(rng):
    counts = {0: 811, 1: 37, 2: 120, 3: 64}
    labels = np.repeat(np.arange(4), [counts[c] for c in range(4)])
    rng.shuffle(labels)
    n = labels.size
    table = FeatureTable(("a", "b"), rng.normal(0, 1, (n, 2)), labels,
                         np.zeros((n, 2), dtype=np.int64))
    out = undersample(table, seed=5)
    got = out.class_counts()
    ok = (got[0] == 120 and got[1] == 37 and got[2] == 120 and got[3] == 64)
    _report("undersampling cap", ok,
            f"class counts after {dict(sorted(got.items()))}; "
            f"majority reduced to the largest minority (120) exactly")


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def test_analytic_gradients_match_finite_differences():
    h = 1e-5
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    cases = [
        (Logreg(162, seed=3), (8, 162)),
        (Mlp(162, hidden=(32, 16), seed=3), (8, 162)),
        (Lstm(52, hidden=16, seed=3), (6, 12, 52)),
    ]
    worst = 0.0
    n_checked = 0
    for model, shape in cases:
        X = rng.normal(0, 1, shape)
        y = rng.integers(0, 4, shape[0])
        _, grads = model.loss_and_grads(X, y)
        names = list(model.param_names)
        for _ in range(30):
            name = names[rng.integers(len(names))]
            arr = model.params[name]
            i = rng.integers(arr.size)
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            lp = model.loss(X, y)
            arr.flat[i] = orig - h
            lm = model.loss(X, y)
            arr.flat[i] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name].flat[i]
            scale = max(abs(an), abs(fd), 1e-12)
            rel = abs(an - fd) / scale
            if max(abs(an), abs(fd)) > 1e-6:
                worst = max(worst, rel)
                assert rel <= 1e-5, f"{model.kind}.{name}[{i}]"
            else:
                assert abs(an - fd) < 1e-10
            n_checked += 1
    dt = time.perf_counter() - t0
    _report("analytic vs finite-difference gradients",
            worst <= 1e-5 and dt < 30.0,
            f"{n_checked} coordinates across 3 models, worst rel err "
            f"{worst:.2e} (tolerance 1e-5), {dt:.1f}s (budget 30s)")


# ---------------------------------------------------------------------------
# Integrated gradients
# ---------------------------------------------------------------------------

def test_integrated_gradients_axioms(big_run):
    t0 = time.perf_counter()
    flat = _test_split(big_run, scaled=True)
    seq = to_sequences(flat)

    # completeness on the trained recurrent model at 256 steps
    worst_ratio = 0.0
    lstm = load_model(big_run["out"] / "train" / "lstm")
    for baseline in (np.zeros_like(seq[:4]), seq[10:14]):
        vec = integrated_gradients(lstm, seq[:4], baseline, class_idx=3,
                                   steps=256)
        assert vec.completeness_ok()
        worst_ratio = max(worst_ratio,
                          float((vec.residual / vec.tolerance).max()))

    # a linear class logit is integrated exactly at any step count
    logreg = load_model(big_run["out"] / "train" / "logreg")
    worst_lin = 0.0
    for steps in (1, 3, 17):
        vec = integrated_gradients(logreg, flat.X[:6], np.zeros((6, 162)),
                                   class_idx=1, steps=steps)
        worst_lin = max(worst_lin, float(vec.residual.max()))
    assert worst_lin <= 1e-12

    # attribution against itself is identically zero
    for kind, X in (("logreg", flat.X), ("mlp", flat.X), ("lstm", seq)):
        model = load_model(big_run["out"] / "train" / kind)
        vec = integrated_gradients(model, X[:3], X[:3], class_idx=0, steps=4)
        assert (vec.attributions == 0.0).all(), kind

    dt = time.perf_counter() - t0
    _report("integrated-gradients axioms", dt < 60.0,
            f"lstm completeness residual/tolerance worst {worst_ratio:.3f} "
            f"at 256 steps; linear residual {worst_lin:.1e} (<=1e-12); "
            f"self-attribution exactly 0; {dt:.1f}s (budget 60s)")


def test_ig_completeness_on_trained_relu_net(big_run):
    # KNOWN RED at desk scale: the midpoint path sum over a piecewise-linear
    # logit carries O(1/steps) error proportional to the total ReLU kink
    # curvature it crosses, and any net confident enough to score macro-F1
    # >= 0.9 here carries several logit units of it.  The residual is pure
    # discretization (it shrinks as steps grow, see the sweep in the detail
    # line), not a defect of the attribution formula; docs/acceptance.md
    # carries the measurements and the analysis.
    flat = _test_split(big_run, scaled=True)
    mlp = load_model(big_run["out"] / "train" / "mlp")
    x = flat.X[:4]
    worst = {}
    for steps in (64, 256, 1024, 4096):
        r = 0.0
        for baseline in (np.zeros_like(x), flat.X[10:14]):
            vec = integrated_gradients(mlp, x, baseline, class_idx=3,
                                       steps=steps)
            r = max(r, float((vec.residual / vec.tolerance).max()))
        worst[steps] = r
    sweep = ", ".join(f"{s}: {r:.2f}" for s, r in worst.items())
    _report("ig completeness, trained relu net",
            worst[256] <= 1.0,
            f"residual/tolerance worst at steps {{{sweep}}} "
            f"(needs <= 1.0 at 256 steps)")


# ---------------------------------------------------------------------------
# Permutation importance on the planted world
# ---------------------------------------------------------------------------

class PlantedRuleModel:
    """The planted scoring rule itself, reading only its causal channels.

    Recomputes the annual summaries the generator used (warm-season mean
    temperature, annual precipitation, annual jump count, elevation) from a
    monthly sequence input and carves classes at the sample's own class
    shares. Every other channel provably cannot move its predictions.
    """

    kind = "rule"

    def __init__(self, y: np.ndarray):
        counts = np.bincount(y, minlength=4).astype(np.float64)
        self.proportions = counts / counts.sum()
        names = list(SEQUENCE_CHANNELS)
        self.idx = {name: names.index(name)
                    for name in ("t2m", "tp", "monTstep6", "DEM_1km")}

    def predict(self, X: np.ndarray) -> np.ndarray:
        w = MONTH_LENGTHS[5:8].astype(np.float64)
        warm = (X[:, 5:8, self.idx["t2m"]] * w).sum(axis=1) / w.sum()
        summaries = {
            "warm": warm,
            "tp": X[:, :, self.idx["tp"]].sum(axis=1),
            "jumps": X[:, :, self.idx["monTstep6"]].sum(axis=1),
        }
        elev = X[:, 0, self.idx["DEM_1km"]]
        labels, _ = plant_labels(summaries, elev, self.proportions)
        return labels


def test_permutation_importance_separates_planted_causes(big_run):
    raw = _test_split(big_run, scaled=False)
    X_raw = to_sequences(raw)
    names = list(SEQUENCE_CHANNELS)

    # the rule itself: channels it never reads must score exactly zero
    rule = PlantedRuleModel(raw.labels)
    rep = permutation_importance(rule, X_raw, raw.labels, names,
                                 n_reps=10, seed=0)
    assert np.array_equal(
        rep.importances,
        rep.reference_score - rep.rep_scores.mean(axis=0))
    unused = [n for n in names if n not in CAUSAL]
    unused_imp = np.array([rep.importances[names.index(n)] for n in unused])
    assert (unused_imp == 0.0).all(), "an unread channel moved the score"
    rule_noise = rep.importances[names.index(NOISE_CHANNEL)]
    rule_top = [n for n, _ in rep.ranked()[:4]]
    assert sorted(rule_top) == sorted(CAUSAL)
    assert all(imp > 0 for _, imp in rep.ranked()[:4])

    # the trained sequence model rediscovers the same channels
    scaled = _test_split(big_run, scaled=True)
    X = to_sequences(scaled)
    lstm = load_model(big_run["out"] / "train" / "lstm")
    rep_l = permutation_importance(lstm, X, scaled.labels, names,
                                   n_reps=10, seed=0)
    assert np.array_equal(
        rep_l.importances,
        rep_l.reference_score - rep_l.rep_scores.mean(axis=0))
    noise = rep_l.importances[names.index(NOISE_CHANNEL)]
    ranks = {n: rep_l.rank_of(n) for n in CAUSAL}
    ok = abs(noise) < 0.01 and all(r <= 5 for r in ranks.values())
    top5 = ", ".join(f"{n} {i:+.3f}" for n, i in rep_l.ranked()[:5])
    _report("planted-cause separation", ok,
            f"rule model: unread channels exactly 0 (noise {rule_noise:+.1e})"
            f", causal top-4; trained lstm: noise {noise:+.1e} (<0.01), "
            f"causal ranks {ranks}; top5 [{top5}]")


# ---------------------------------------------------------------------------
# Learnability
# ---------------------------------------------------------------------------

def test_planted_world_is_learnable(big_run):
    f1 = {}
    for kind in ("logreg", "mlp", "lstm"):
        report = json.loads((big_run["out"] / "eval" / f"{kind}.json")
                            .read_text(encoding="utf-8"))
        f1[kind] = report["macro"]["f1"]
    fit_time = sum(big_run["times"][s]
                   for s in ("synth", "features", "train"))
    ok = (f1["logreg"] >= 0.7 and f1["mlp"] >= 0.9 and f1["lstm"] >= 0.9
          and fit_time < 300.0)
    _report("planted world learnable", ok,
            f"held-out macro-F1 logreg {f1['logreg']:.3f} (>=0.7), "
            f"mlp {f1['mlp']:.3f} (>=0.9), lstm {f1['lstm']:.3f} (>=0.9); "
            f"generate+features+train {fit_time:.0f}s (budget 300s)")


# ---------------------------------------------------------------------------
# Projection algebra
# ---------------------------------------------------------------------------

def test_projection_probability_algebra(big_run):
    proj = big_run["out"] / "project"
    mask = read_raster(big_run["out"] / "synth" / "mask")
    worst_row = 0.0
    worst_sum = 0.0
    worst_mag = 0.0
    for ssp in ("ssp-warm", "ssp-hot"):
        ens = ProbabilityMaps.read(proj / f"ensemble_{ssp}_2040-2050",
                                   "ensemble")
        valid = np.isfinite(ens.probs).all(axis=0)
        rows = ens.probs[:, valid].sum(axis=0)
        worst_row = max(worst_row, float(np.abs(rows - 1.0).max()))
        deltas = np.stack([
            read_raster(proj / f"delta_{ssp}_2040-2050_class{c}").values
            for c in range(4)])
        dvalid = np.isfinite(deltas).all(axis=0)
        worst_mag = max(worst_mag, float(np.abs(deltas[:, dvalid]).max()))
        worst_sum = max(worst_sum,
                        float(np.abs(deltas[:, dvalid].sum(axis=0)).max()))

    # a projection that exactly matches the observed classes changes nothing
    onehot = np.stack([(mask.values == c).astype(np.float64)
                       for c in range(4)])
    self_delta = delta_heatmap(ProbabilityMaps(mask.spec, onehot, "ensemble"),
                               mask)
    valid = self_delta.valid
    exact_zero = bool((self_delta.deltas[:, valid] == 0.0).all())

    ok = (worst_row <= 1e-6 and worst_mag <= 1.0 and worst_sum <= 1e-6
          and exact_zero)
    _report("projection algebra", ok,
            f"ensemble rows sum to 1 within {worst_row:.1e} (<=1e-6); "
            f"|delta|<=1 (max {worst_mag:.3f}); per-pixel delta sums within "
            f"{worst_sum:.1e}; one-hot self-delta exactly 0: {exact_zero}")


# ---------------------------------------------------------------------------
# Drought index
# ---------------------------------------------------------------------------

def test_drought_index_is_standardized_on_its_baseline():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    years, n_pix = 30, 300
    days = years * 365
    wet = rng.random((days, n_pix)) < 0.4
    precip = np.where(wet, rng.gamma(2.0, 4.0, (days, n_pix)), 0.0)
    params = fit_spi(precip)
    z = spi_monthly(precip, params)
    z = z[np.isfinite(z)]
    mean, std = float(z.mean()), float(z.std())
    dt = time.perf_counter() - t0
    ok = abs(mean) <= 0.05 and 0.9 <= std <= 1.1 and dt < 20.0
    _report("drought index standardized", ok,
            f"{years}-year baseline, {n_pix} pixels: mean {mean:+.4f} "
            f"(|.|<=0.05), std {std:.4f} (in [0.9, 1.1]), {dt:.1f}s "
            f"(budget 20s)")


# ---------------------------------------------------------------------------
# Metric oracles
# ---------------------------------------------------------------------------

def _brute_report(y_true, y_pred):
    cm = [[0] * 4 for _ in range(4)]
    for t, p in zip(y_true, y_pred):
        cm[t][p] += 1
    precision, recall, f1 = [], [], []
    for c in range(4):
        tp = cm[c][c]
        pred_pos = sum(cm[r][c] for r in range(4))
        support = sum(cm[c])
        prec = tp / pred_pos if pred_pos else 0.0
        rec = tp / support if support else 0.0
        precision.append(prec)
        recall.append(rec)
        f1.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    acc = sum(cm[c][c] for c in range(4)) / len(y_true)
    return np.array(cm), np.array(precision), np.array(recall), \
        np.array(f1), acc


def _brute_ap(y, s):
    n_pos = sum(y)
    if n_pos == 0:
        return 0.0
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(s), reverse=True):
        taken = [i for i in range(len(s)) if s[i] >= t]
        tp = sum(y[i] for i in taken)
        precision = tp / len(taken)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def test_classification_metrics_match_brute_force():
    import itertools
    checked = 0
    for n_classes, max_n in ((2, 6), (3, 4), (4, 3)):
        for n in range(1, max_n + 1):
            for y_true in itertools.product(range(n_classes), repeat=n):
                yt = np.array(y_true)
                for y_pred in itertools.product(range(n_classes), repeat=n):
                    yp = np.array(y_pred)
                    rep = scores(confusion(yt, yp))
                    cm, prec, rec, f1, acc = _brute_report(y_true, y_pred)
                    assert np.array_equal(rep.confusion_matrix, cm)
                    assert np.array_equal(rep.precision, prec)
                    assert np.array_equal(rep.recall, rec)
                    assert np.array_equal(rep.f1, f1)
                    assert rep.accuracy == acc
                    assert rep.macro_f1 == float(f1.mean())
                    checked += 1

    ap_checked = 0
    score_levels = (0.1, 0.5, 0.9)
    for n in range(1, 5):
        for y in itertools.product((0, 1), repeat=n):
            for s in itertools.product(score_levels, repeat=n):
                got = average_precision(np.array(y, dtype=float),
                                        np.array(s))
                want = _brute_ap(y, s)
                assert got == want, (y, s)
                ap_checked += 1

    _report("metric oracles", True,
            f"{checked} exhaustive label/prediction pairs (sizes <= 6) and "
            f"{ap_checked} tied-score rankings agree with brute force "
            f"exactly")


# ---------------------------------------------------------------------------
# Morphometrics
# ---------------------------------------------------------------------------

def _metric_surface(fn, n=9, cell_m=1.0):
    j = np.arange(n)
    i = np.arange(n)
    x = (j[None, :] - n // 2) * cell_m
    y = (n // 2 - i[:, None]) * cell_m
    spec = GridSpec(n, n, 0.0, n * 0.01, 0.01)
    return Raster(spec, fn(x, y) + np.zeros((n, n)))


def test_morphometric_closed_forms_and_translation():
    inner = (slice(1, -1), slice(1, -1))

    # a tilted plane: 45 degree slope descending due west, zero curvature
    plane = terrain.morphometrics(_metric_surface(lambda x, y: x),
                                  cell_m=1.0)
    worst = max(float(np.abs(plane["morf_1"].values[inner] - 45.0).max()),
                float(np.abs(plane["morf_2"].values[inner] - 270.0).max()))
    for name in ("morf_4", "morf_5", "morf_6", "morf_7", "morf_8", "morf_9"):
        worst = max(worst, float(np.abs(plane[name].values[inner]).max()))

    # a paraboloid cap: both principal curvatures equal 2/R everywhere
    para = terrain.morphometrics(
        _metric_surface(lambda x, y: -(x * x + y * y)), cell_m=1.0)
    for name in ("morf_8", "morf_9"):
        worst = max(worst,
                    float(np.abs(para[name].values[inner] - 2.0).max()))

    # translating the surface by an exactly representable offset changes
    # no output bit (the constant term never enters the derivatives)
    rng = np.random.default_rng(9)
    z = np.round(rng.normal(0, 25, (7, 9)) * 2**20) / 2**20
    spec = GridSpec(9, 7, 10.0, 55.0, 0.01)
    m1 = terrain.morphometrics(Raster(spec, z), cell_m=500.0)
    m2 = terrain.morphometrics(Raster(spec, z + 1024.0), cell_m=500.0)
    translated_exact = all(
        np.array_equal(m1[n].values, m2[n].values, equal_nan=True)
        for n in terrain.MORPH_NAMES)

    ok = worst <= 1e-9 and translated_exact
    _report("morphometric closed forms", ok,
            f"plane + paraboloid worst abs err {worst:.1e} (<=1e-9); "
            f"translation bitwise invariant: {translated_exact}")


# ---------------------------------------------------------------------------
# Determinism
# ---------------------------------------------------------------------------

DET_CFG = {
    "seed": 3,
    "grid": {"width": 32, "height": 32, "lon_min": 60.0, "lat_max": 64.0,
             "cell": 0.125},
    "synth": {"baseline_years": 4, "future_years": 1,
              "climate_models": ["alpha"], "ssps": ["ssp-warm"],
              "periods": ["2040-2050"]},
    "features": {"chunk": 256},
    "train": {"epochs": 8, "batch_size": 256, "patience": 8,
              "mlp_hidden": [24, 16], "lstm_hidden": 12},
    "attribute": {"model": "mlp", "n_reps": 2, "steps": 8,
                  "scenario": {"climate_model": "alpha", "ssp": "ssp-warm",
                               "period": "2040-2050"},
                  "regions": [{"name": "band",
                               "rect": [64.0, 60.2, 62.0, 63.0],
                               "class": 3}]},
    "project": {"model": "mlp"},
    "report": {"top_features": 8, "delta_classes": [3]},
}


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_two_pipeline_runs_are_byte_identical(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(DET_CFG), encoding="utf-8")
    stages = ("synth", "features", "train", "eval", "attribute",
              "project", "report")
    for out in ("a", "b"):
        for stage in stages:
            rc = cli_main([stage, "--config", str(cfg),
                           "--out", str(tmp_path / out)])
            assert rc == 0, f"{out}/{stage}"
    a = _tree_bytes(tmp_path / "a")
    b = _tree_bytes(tmp_path / "b")
    assert set(a) == set(b)
    differing = [name for name in a if a[name] != b[name]]
    _report("pipeline determinism", not differing,
            f"two complete runs, {len(a)} artifacts each, byte-identical"
            + (f"; DIFFER: {differing[:5]}" if differing else ""))


# ---------------------------------------------------------------------------
# Qualitative: warming pushes the rainfed class poleward
# ---------------------------------------------------------------------------

@pytest.mark.xfail(strict=False,
                   reason="directional expectation, not a hard guarantee")
def test_warming_shifts_rainfed_class_poleward(big_run):
    proj = big_run["out"] / "project"
    lines = []
    ok = True
    for ssp in ("ssp-warm", "ssp-hot"):
        delta = read_raster(proj / f"delta_{ssp}_2040-2050_class3").values
        third = delta.shape[0] // 3
        north = float(np.nanmean(delta[:third]))
        south = float(np.nanmean(delta[-third:]))
        ok = ok and north > 0 > south
        lines.append(f"{ssp}: north {north:+.3f}, south {south:+.3f}")
    _report("warming shifts rainfed class poleward", ok, "; ".join(lines))
