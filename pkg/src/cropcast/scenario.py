"""Future-projection analytics: multi-model ensembles of class-probability
maps, deltas against the observed 2010 class mask, and class-count
trajectories across emission scenarios and periods.

A probability map holds one raster per class on a shared grid; every valid
pixel is a point on the 4-simplex. The delta of class c is the predicted
probability minus the one-hot observed state, so negative values flag land
whose current class is at risk and positive values flag where a class is
likely to appear.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError
from .grid import (CLASS_VALUES, GridSpec, Raster, class_onehot, read_raster,
                   validate_class_mask, write_raster)

N_CLASSES = len(CLASS_VALUES)
BASELINE_PERIOD = "2010"
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True, slots=True)
class ScenarioKey:
    """One projection run: a climate model driven by an SSP over a period."""

    climate_model: str
    ssp: str
    period: str

    def __post_init__(self):
        for field in (self.climate_model, self.ssp, self.period):
            if not field:
                raise ValueError("scenario key fields must be non-empty")

    def slug(self) -> str:
        return f"{self.climate_model}_{self.ssp}_{self.period}"


@dataclass(slots=True)
class ProbabilityMaps:
    """Per-class probability rasters with shared grid and provenance."""

    spec: GridSpec
    probs: np.ndarray  # (4, H, W) float64, NaN where nodata
    provenance: ScenarioKey | str

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (N_CLASSES, *self.spec.shape):
            raise ValueError("probability stack must be (4, H, W)")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.probs).all(axis=0)

    def validate(self) -> None:
        v = self.valid
        if not v.any():
            raise DataError("probability maps have no valid pixels")
        vals = self.probs[:, v]
        if (vals < 0).any() or (vals > 1).any():
            raise DataError("class probabilities outside [0, 1]")
        if np.abs(vals.sum(axis=0) - 1.0).max() > SIMPLEX_TOL:
            raise DataError("class probabilities do not sum to 1")

    def raster(self, cls: int) -> Raster:
        return Raster(self.spec, self.probs[cls].copy())

    def argmax_classes(self) -> Raster:
        """Most probable class per pixel; ties go to the lowest class."""
        out = np.argmax(self.probs, axis=0).astype(np.float64)
        out[~self.valid] = np.nan
        return Raster(self.spec, out)

    def write(self, stem) -> None:
        stem = Path(stem)
        for cls in CLASS_VALUES:
            write_raster(self.raster(cls), f"{stem}_class{cls}")

    @classmethod
    def read(cls, stem, provenance: ScenarioKey | str) -> "ProbabilityMaps":
        stem = Path(stem)
        rasters = [read_raster(f"{stem}_class{c}") for c in CLASS_VALUES]
        spec = rasters[0].spec
        return cls(spec, np.stack([r.values for r in rasters]), provenance)


@dataclass(slots=True)
class DeltaMap:
    """Per-class probability change relative to the observed mask."""

    spec: GridSpec
    deltas: np.ndarray  # (4, H, W), NaN where either operand is nodata

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.deltas.shape != (N_CLASSES, *self.spec.shape):
            raise ValueError("delta stack must be (4, H, W)")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.deltas).all(axis=0)

    def raster(self, cls: int) -> Raster:
        return Raster(self.spec, self.deltas[cls].copy())

    def write(self, stem) -> None:
        stem = Path(stem)
        for cls in CLASS_VALUES:
            write_raster(self.raster(cls), f"{stem}_class{cls}")


def probability_maps_from_rows(spec: GridSpec, proba: np.ndarray,
                               pix: np.ndarray,
                               provenance: ScenarioKey | str
                               ) -> ProbabilityMaps:
    """Scatter per-row class probabilities back onto the grid."""
    if proba.ndim != 2 or proba.shape[1] != N_CLASSES:
        raise ValueError("probabilities must be (N, 4)")
    stack = np.full((N_CLASSES, *spec.shape), np.nan)
    for cls in CLASS_VALUES:
        stack[cls, pix[:, 0], pix[:, 1]] = proba[:, cls]
    return ProbabilityMaps(spec, stack, provenance)


def ensemble_average(maps: list[ProbabilityMaps]) -> ProbabilityMaps:
    """Unweighted mean over climate models for one (ssp, period).

    Inputs are summed in sorted climate-model order, so any input ordering
    produces bitwise-identical output.
    """
    if not maps:
        raise ValueError("need at least one probability map")
    first = maps[0]
    keys = []
    for m in maps:
        if m.spec != first.spec:
            raise DataError("ensemble members live on different grids")
        if not isinstance(m.provenance, ScenarioKey):
            raise DataError("ensemble members need scenario provenance")
        keys.append(m.provenance)
    if len({(k.ssp, k.period) for k in keys}) != 1:
        raise DataError("ensemble members mix ssp or period")
    if len({k.climate_model for k in keys}) != len(keys):
        raise DataError("duplicate climate model in ensemble")
    ordered = sorted(maps, key=lambda m: m.provenance.climate_model)
    total = np.zeros_like(first.probs)
    for m in ordered:
        total += m.probs
    return ProbabilityMaps(first.spec, total / len(maps), "ensemble")


def delta_heatmap(p: ProbabilityMaps, mask: Raster) -> DeltaMap:
    """Predicted probability minus the one-hot observed class, per class."""
    if mask.spec != p.spec:
        raise DataError("probability maps and mask live on different grids")
    validate_class_mask(mask)
    onehot = np.stack([class_onehot(mask, cls).values
                       for cls in CLASS_VALUES])
    deltas = p.probs - onehot
    deltas[:, ~(p.valid & mask.valid)] = np.nan
    return DeltaMap(p.spec, deltas)


def class_counts(source: ProbabilityMaps | Raster) -> dict[int, int]:
    """Pixels per class over valid pixels; probabilities take the argmax
    (ties to the lowest class index)."""
    if isinstance(source, ProbabilityMaps):
        labels = source.argmax_classes()
    else:
        validate_class_mask(source)
        labels = source
    vals = labels.values[labels.valid].astype(np.int64)
    counts = np.bincount(vals, minlength=N_CLASSES)
    return {int(c): int(counts[c]) for c in CLASS_VALUES}


def trajectory_report(baseline: Raster,
                      projections: dict[ScenarioKey, ProbabilityMaps]
                      ) -> pd.DataFrame:
    """Class counts per (ssp, period), each ssp starting from the observed
    2010 mask; multiple climate models per (ssp, period) are ensembled."""
    base_counts = class_counts(baseline)
    groups: dict[tuple[str, str], list[ProbabilityMaps]] = {}
    for key, maps in projections.items():
        groups.setdefault((key.ssp, key.period), []).append(maps)
    rows = []
    for ssp in sorted({s for s, _ in groups}):
        for cls in CLASS_VALUES:
            rows.append({"ssp": ssp, "period": BASELINE_PERIOD,
                         "klass": cls, "count": base_counts[cls]})
    for (ssp, period) in sorted(groups):
        members = groups[(ssp, period)]
        merged = members[0] if len(members) == 1 else ensemble_average(members)
        counts = class_counts(merged)
        for cls in CLASS_VALUES:
            rows.append({"ssp": ssp, "period": period, "klass": cls,
                         "count": counts[cls]})
    return pd.DataFrame(rows, columns=["ssp", "period", "klass", "count"])
