"""Model interpretation: permutation feature importance and Integrated
Gradients, plus region-averaged attributions on a raster grid.

Permutation importance shuffles one channel across samples — a single
permutation reused at every timestep, so the shuffled-in values keep their
own temporal coherence — and reports the drop in a reference score.
Integrated Gradients accumulates the class logit's input gradient along the
straight path from a baseline, midpoint rule, and carries a completeness
residual so the approximation quality is always on record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import SEQUENCE_CHANNELS, FeatureTable, to_sequences
from .errors import DataError
from .grid import GridSpec
from .metrics import confusion, scores
from .models import Model

#: territories with significant projected class change, as
#: (lat_top, lon_left, lat_bottom, lon_right) plus the class that shifts
REGIONS_OF_INTEREST = {
    "northern-china": ((45.0, 121.0, 42.5, 128.0), 1),
    "eastern-europe": ((53.0, 21.0, 45.0, 45.0), 2),
    "northern-russia": ((63.0, 61.0, 57.5, 80.0), 3),
}


def macro_precision_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Unweighted mean of the four per-class precisions."""
    return float(scores(confusion(y_true, y_pred)).macro_precision)


# ---------------------------------------------------------------------------
# Permutation importance
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class ImportanceReport:
    feature_names: tuple[str, ...]
    reference_score: float
    rep_scores: np.ndarray  # (K, F): score with feature j shuffled, rep k
    importances: np.ndarray  # (F,): reference − mean over reps
    score_name: str = "macro_precision"

    @property
    def n_reps(self) -> int:
        return self.rep_scores.shape[0]

    def validate(self) -> None:
        if self.rep_scores.ndim != 2 or self.rep_scores.shape[1] != len(
                self.feature_names):
            raise DataError("rep score matrix does not match feature names")
        expect = self.reference_score - self.rep_scores.mean(axis=0)
        if not np.array_equal(expect, self.importances):
            raise DataError("stored importances break the defining identity")

    def ranked(self) -> list[tuple[str, float]]:
        order = np.argsort(-self.importances, kind="stable")
        return [(self.feature_names[j], float(self.importances[j]))
                for j in order]

    def rank_of(self, name: str) -> int:
        """1-based position of a feature in the importance ordering."""
        for r, (nm, _) in enumerate(self.ranked(), start=1):
            if nm == name:
                return r
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        order = np.argsort(-self.importances, kind="stable")
        return pd.DataFrame({
            "feature": [self.feature_names[j] for j in order],
            "importance": self.importances[order],
            "rank": np.arange(1, len(order) + 1),
        })

    def to_csv(self, path) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        payload = {
            "score": self.score_name,
            "reference_score": self.reference_score,
            "n_reps": self.n_reps,
            "feature_names": list(self.feature_names),
            "rep_scores": self.rep_scores.tolist(),
            "importances": self.importances.tolist(),
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True))
        return path

    @classmethod
    def from_json(cls, path) -> "ImportanceReport":
        payload = json.loads(Path(path).read_text())
        report = cls(
            feature_names=tuple(payload["feature_names"]),
            reference_score=float(payload["reference_score"]),
            rep_scores=np.asarray(payload["rep_scores"], dtype=np.float64),
            importances=np.asarray(payload["importances"], dtype=np.float64),
            score_name=payload["score"],
        )
        report.validate()
        return report


def permutation_importance(model: Model, X: np.ndarray, y: np.ndarray,
                           feature_names, n_reps: int = 10, seed: int = 0,
                           score_fn=macro_precision_score) -> ImportanceReport:
    """Score drop when one input channel is shuffled across samples.

    For sequence inputs (N, T, C) the same sample permutation is applied to
    a channel at all T timesteps; for flat inputs (N, F) a column is
    shuffled. The shuffle is repeated ``n_reps`` times with fresh
    permutations and the importance is reference minus the mean score.
    """
    if n_reps < 1:
        raise ValueError("need at least one shuffle repetition")
    feature_names = tuple(feature_names)
    n_feat = X.shape[-1]
    if len(feature_names) != n_feat:
        raise ValueError(f"{n_feat} input channels but "
                         f"{len(feature_names)} names")
    reference = float(score_fn(y, model.predict(X)))
    if not np.isfinite(reference):
        raise DataError("reference score is not finite")
    rng = np.random.default_rng(seed)
    rep_scores = np.empty((n_reps, n_feat))
    work = X.copy()
    for k in range(n_reps):
        for j in range(n_feat):
            perm = rng.permutation(X.shape[0])
            work[..., j] = X[perm, ..., j]
            s = float(score_fn(y, model.predict(work)))
            if not np.isfinite(s):
                raise DataError(f"score is not finite with channel "
                                f"{feature_names[j]} shuffled")
            rep_scores[k, j] = s
            work[..., j] = X[..., j]
    return ImportanceReport(feature_names, reference, rep_scores,
                            reference - rep_scores.mean(axis=0))


# ---------------------------------------------------------------------------
# Integrated Gradients
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class AttributionVector:
    attributions: np.ndarray  # same shape as x
    x: np.ndarray
    baseline: np.ndarray
    class_idx: int
    steps: int
    delta_logit: np.ndarray  # (N,): F(x) − F(baseline) for the class logit
    residual: np.ndarray  # (N,): |sum of attributions − delta_logit|

    @property
    def tolerance(self) -> np.ndarray:
        return 1e-3 * np.maximum(1.0, np.abs(self.delta_logit))

    def completeness_ok(self) -> bool:
        return bool((self.residual <= self.tolerance).all())


def integrated_gradients(model: Model, x: np.ndarray, baseline: np.ndarray,
                         class_idx: int, steps: int = 256
                         ) -> AttributionVector:
    """Path-integral attribution of one class logit, midpoint rule.

    ``x`` and ``baseline`` may be a single sample or a batch; attribution
    coordinates multiply (x − baseline) by the path-averaged gradient, so
    they sum to F(x) − F(baseline) up to the recorded residual.
    """
    if steps < 1:
        raise ValueError("need at least one integration step")
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if x.shape != baseline.shape:
        raise ValueError("input and baseline shapes differ")
    batch_ndim = 3 if model.kind == "lstm" else 2
    single = x.ndim == batch_ndim - 1
    if single:
        x = x[None]
        baseline = baseline[None]
    diff = x - baseline
    total = np.zeros_like(x)
    for k in range(steps):
        alpha = (k + 0.5) / steps
        total += model.logit_input_grad(baseline + alpha * diff, class_idx)
    attr = diff * total / steps
    axes = tuple(range(1, x.ndim))
    delta = model.forward(x)[:, class_idx] - model.forward(baseline)[:, class_idx]
    residual = np.abs(attr.sum(axis=axes) - delta)
    if single:
        return AttributionVector(attr[0], x[0], baseline[0], class_idx,
                                 steps, delta, residual)
    return AttributionVector(attr, x, baseline, class_idx, steps, delta,
                             residual)


# ---------------------------------------------------------------------------
# Region-averaged attribution
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class RegionAttribution:
    region: tuple[float, float, float, float]
    class_idx: int
    feature_names: tuple[str, ...]
    attribution: np.ndarray  # (F,): mean folded attribution over pixels
    n_pixels: int
    mean_delta_logit: float
    max_residual: float
    steps: int

    def ranked(self, top: int | None = None) -> list[tuple[str, float]]:
        order = np.argsort(-np.abs(self.attribution), kind="stable")
        if top is not None:
            order = order[:top]
        return [(self.feature_names[j], float(self.attribution[j]))
                for j in order]

    def to_frame(self) -> pd.DataFrame:
        pairs = self.ranked()
        return pd.DataFrame({
            "feature": [p[0] for p in pairs],
            "attribution": [p[1] for p in pairs],
            "rank": np.arange(1, len(pairs) + 1),
        })

    def to_csv(self, path) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        payload = {
            "region": list(self.region),
            "class": self.class_idx,
            "n_pixels": self.n_pixels,
            "steps": self.steps,
            "mean_delta_logit": self.mean_delta_logit,
            "max_residual": self.max_residual,
            "feature_names": list(self.feature_names),
            "attribution": self.attribution.tolist(),
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True))
        return path


def _rows_by_pixel(table: FeatureTable) -> dict[tuple[int, int], int]:
    return {(int(i), int(j)): r for r, (i, j) in enumerate(table.pix)}


def region_attribution(model: Model, region, scenario: FeatureTable,
                       baseline: FeatureTable, class_idx: int,
                       spec: GridSpec, steps: int = 256,
                       batch: int = 256) -> RegionAttribution:
    """Mean per-pixel attribution of a class logit inside a rectangle.

    Each pixel's scenario features are attributed against that same pixel's
    historical features; sequence attributions are folded to channel totals
    (summed over the 12 timesteps) before averaging. Both tables must be
    scaled exactly as the model was trained.
    """
    lat_top, lon_left, lat_bottom, lon_right = region
    box = spec.bbox_mask(lat_top, lon_left, lat_bottom, lon_right)
    scn_rows = _rows_by_pixel(scenario)
    base_rows = _rows_by_pixel(baseline)
    pixels = sorted(pix for pix in scn_rows.keys() & base_rows.keys()
                    if box[pix])
    if not pixels:
        raise DataError("no valid pixels inside the requested rectangle")
    scn = scenario.take(np.array([scn_rows[p] for p in pixels]))
    base = baseline.take(np.array([base_rows[p] for p in pixels]))

    sequence = model.kind == "lstm"
    if sequence:
        X = to_sequences(scn)
        X0 = to_sequences(base)
        names = SEQUENCE_CHANNELS
    else:
        X = scn.X
        X0 = base.X
        names = scn.columns

    n = len(pixels)
    folded_sum = np.zeros(len(names))
    delta_sum = 0.0
    max_residual = 0.0
    for start in range(0, n, batch):
        ig = integrated_gradients(model, X[start:start + batch],
                                  X0[start:start + batch], class_idx, steps)
        attr = ig.attributions
        if sequence:
            attr = attr.sum(axis=1)  # collapse timesteps per channel
        folded_sum += attr.sum(axis=0)
        delta_sum += float(ig.delta_logit.sum())
        max_residual = max(max_residual, float(ig.residual.max()))
    return RegionAttribution(tuple(region), class_idx, tuple(names),
                             folded_sum / n, n, delta_sum / n,
                             max_residual, steps)
