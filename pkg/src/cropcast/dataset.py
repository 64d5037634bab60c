"""Design-matrix assembly: feature table, undersampling, split, scaling,
and the 12-step sequence view used by the recurrent model.

The 162-column order is a frozen contract: the 121 climate features
(variable-major, months 01..12, then ``12m_SPI``) followed by the 41 terrain
features (elevation, then morphometrics scale-major). Sequences are
N x 12 x 52 tensors whose timestep ``t`` holds month ``t+1`` of the ten
monthly variables plus 42 static channels (SPI and terrain) broadcast across
timesteps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .climate import CLIMATE_FEATURE_NAMES, MONTHLY_FEATURE_VARS, SPI_FEATURE_NAME
from .errors import DataError
from .grid import CLASS_VALUES, Raster, validate_class_mask
from .terrain import TERRAIN_FEATURE_NAMES

#: The frozen 162-column order of every feature table.
FEATURE_COLUMNS = CLIMATE_FEATURE_NAMES + TERRAIN_FEATURE_NAMES

#: Per-timestep channel order of the sequence view (10 monthly + 42 static).
SEQUENCE_CHANNELS = MONTHLY_FEATURE_VARS + (SPI_FEATURE_NAME,) + TERRAIN_FEATURE_NAMES

N_FEATURES = len(FEATURE_COLUMNS)
N_TIMESTEPS = 12
N_CHANNELS = len(SEQUENCE_CHANNELS)

assert N_FEATURES == 162
assert N_CHANNELS == 52


@dataclass(slots=True)
class FeatureTable:
    """Rows of per-pixel features, with optional labels and pixel indices."""

    columns: tuple[str, ...]
    X: np.ndarray                 # (N, C) float64
    labels: np.ndarray | None     # (N,) int64 or None for inference tables
    pix: np.ndarray               # (N, 2) int64 row/col on the source grid

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.columns):
            raise ValueError("X shape does not match column names")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.X.shape[0],):
                raise ValueError("labels length does not match rows")
        self.pix = np.asarray(self.pix, dtype=np.int64)
        if self.pix.shape != (self.X.shape[0], 2):
            raise ValueError("pix must be (N, 2)")
        if np.isnan(self.X).any():
            raise ValueError("feature table must not contain NaN")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def class_counts(self) -> dict[int, int]:
        if self.labels is None:
            raise ValueError("table has no labels")
        return {int(c): int((self.labels == c).sum()) for c in CLASS_VALUES}

    def take(self, idx: np.ndarray) -> "FeatureTable":
        labels = None if self.labels is None else self.labels[idx]
        return FeatureTable(self.columns, self.X[idx], labels, self.pix[idx])


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def assemble(feature_rasters: Mapping[str, Raster],
             mask: Raster | None) -> FeatureTable:
    """One row per pixel valid in every feature (and the mask, if given).

    Rows appear in row-major pixel order. Columns follow ``FEATURE_COLUMNS``.
    """
    missing = [c for c in FEATURE_COLUMNS if c not in feature_rasters]
    if missing:
        raise DataError(f"missing feature rasters: {missing[:5]} "
                        f"({len(missing)} total)")
    specs = {feature_rasters[c].spec for c in FEATURE_COLUMNS}
    if mask is not None:
        validate_class_mask(mask)
        specs.add(mask.spec)
    if len(specs) != 1:
        raise DataError("feature rasters disagree on grid geometry")
    spec = specs.pop()

    valid = np.ones(spec.shape, dtype=bool)
    for c in FEATURE_COLUMNS:
        valid &= feature_rasters[c].valid
    if mask is not None:
        valid &= mask.valid

    ii, jj = np.nonzero(valid)  # row-major order
    X = np.empty((ii.size, N_FEATURES))
    for k, c in enumerate(FEATURE_COLUMNS):
        X[:, k] = feature_rasters[c].values[ii, jj]
    labels = None
    if mask is not None:
        labels = mask.values[ii, jj].astype(np.int64)
    return FeatureTable(FEATURE_COLUMNS, X, labels, np.column_stack([ii, jj]))


# ---------------------------------------------------------------------------
# Undersampling and splitting
# ---------------------------------------------------------------------------

def undersample_counts(counts: Mapping[int, int]) -> dict[int, int]:
    """Post-undersampling class counts (pure arithmetic, no data touched)."""
    target = max(counts.get(c, 0) for c in (1, 2, 3))
    out = {int(c): int(counts.get(c, 0)) for c in CLASS_VALUES}
    out[0] = min(out[0], target)
    return out


def undersample(table: FeatureTable, seed: int) -> FeatureTable:
    """Randomly reduce class 0 to the largest minority-class count.

    Selection is seeded and without replacement; surviving rows keep their
    original order. Identity when class 0 is already at or below target.
    """
    counts = table.class_counts()
    target = undersample_counts(counts)[0]
    if counts[0] <= target:
        return table
    rng = np.random.default_rng(seed)
    zero_idx = np.nonzero(table.labels == 0)[0]
    keep_zero = rng.choice(zero_idx, size=target, replace=False)
    keep = np.zeros(table.n_rows, dtype=bool)
    keep[keep_zero] = True
    keep[table.labels != 0] = True
    return table.take(np.nonzero(keep)[0])


def split(table: FeatureTable, train_frac: float = 0.75,
          seed: int = 0) -> tuple[FeatureTable, FeatureTable]:
    """Seeded stratified split; each class is shuffled and cut separately."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    if table.labels is None:
        raise ValueError("cannot stratify an unlabeled table")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in CLASS_VALUES:
        idx = np.nonzero(table.labels == c)[0]
        if idx.size == 0:
            continue
        if idx.size < 4:
            raise DataError(f"class {c} has only {idx.size} rows; "
                            "need at least 4 to split")
        perm = rng.permutation(idx)
        n_train = int(round(train_frac * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    return (table.take(np.concatenate(train_idx)),
            table.take(np.concatenate(test_idx)))


# ---------------------------------------------------------------------------
# Min-max scaling
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class ScalerParams:
    """Per-column train-split min/max; constant columns map to 0."""

    columns: tuple[str, ...]
    col_min: np.ndarray
    col_max: np.ndarray

    def to_json(self, path) -> None:
        payload = {c: [float(lo), float(hi)]
                   for c, lo, hi in zip(self.columns, self.col_min, self.col_max)}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "ScalerParams":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        cols = tuple(payload)
        lo = np.array([payload[c][0] for c in cols])
        hi = np.array([payload[c][1] for c in cols])
        return cls(cols, lo, hi)


def fit_scaler(train: FeatureTable) -> ScalerParams:
    return ScalerParams(train.columns,
                        train.X.min(axis=0), train.X.max(axis=0))


def apply_scaler(table: FeatureTable, scaler: ScalerParams) -> FeatureTable:
    """x' = (x - min) / (max - min); no clipping, so future data may leave
    [0, 1]. Columns constant in training map to 0."""
    if table.columns != scaler.columns:
        raise DataError("scaler was fitted on different columns")
    span = scaler.col_max - scaler.col_min
    safe = np.where(span == 0.0, 1.0, span)
    Xs = (table.X - scaler.col_min[None, :]) / safe[None, :]
    Xs[:, span == 0.0] = 0.0
    return FeatureTable(table.columns, Xs, table.labels, table.pix)


# ---------------------------------------------------------------------------
# Sequence view
# ---------------------------------------------------------------------------

def _column_index(columns: tuple[str, ...]) -> dict[str, int]:
    return {c: k for k, c in enumerate(columns)}

def to_sequences(table: FeatureTable) -> np.ndarray:
    """(N, 162) table -> (N, 12, 52) tensor per the channel contract."""
    idx = _column_index(table.columns)
    missing = [c for c in FEATURE_COLUMNS if c not in idx]
    if missing:
        raise DataError(f"table lacks columns {missing[:5]}")
    n = table.n_rows
    seq = np.empty((n, N_TIMESTEPS, N_CHANNELS))
    for t in range(N_TIMESTEPS):
        for ch, var in enumerate(MONTHLY_FEATURE_VARS):
            seq[:, t, ch] = table.X[:, idx[f"{var}_{t + 1:02d}"]]
    static = [idx[SPI_FEATURE_NAME]] + [idx[c] for c in TERRAIN_FEATURE_NAMES]
    seq[:, :, len(MONTHLY_FEATURE_VARS):] = table.X[:, static][:, None, :]
    return seq


def from_sequences(seq: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_sequences`; returns (N, 162) in canonical order."""
    if seq.ndim != 3 or seq.shape[1:] != (N_TIMESTEPS, N_CHANNELS):
        raise ValueError(f"expected (N, {N_TIMESTEPS}, {N_CHANNELS}) tensor")
    n = seq.shape[0]
    out = np.empty((n, N_FEATURES))
    idx = _column_index(FEATURE_COLUMNS)
    for ch, var in enumerate(MONTHLY_FEATURE_VARS):
        for t in range(N_TIMESTEPS):
            out[:, idx[f"{var}_{t + 1:02d}"]] = seq[:, t, ch]
    out[:, idx[SPI_FEATURE_NAME]] = seq[:, 0, len(MONTHLY_FEATURE_VARS)]
    for k, c in enumerate(TERRAIN_FEATURE_NAMES):
        out[:, idx[c]] = seq[:, 0, len(MONTHLY_FEATURE_VARS) + 1 + k]
    return out


def fold_channel_attribution(per_input: np.ndarray) -> np.ndarray:
    """Collapse a (12, 52) per-timestep attribution to 52 channel totals."""
    if per_input.shape != (N_TIMESTEPS, N_CHANNELS):
        raise ValueError(f"expected ({N_TIMESTEPS}, {N_CHANNELS}) attribution")
    return per_input.sum(axis=0)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def write_table(table: FeatureTable, path) -> Path:
    """CSV with full-precision floats plus a JSON manifest; returns CSV path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(table.X, columns=list(table.columns))
    if table.labels is not None:
        frame["label"] = table.labels
    frame["pix_i"] = table.pix[:, 0]
    frame["pix_j"] = table.pix[:, 1]
    frame.to_csv(path, index=False, float_format="%.17g")
    manifest = {
        "columns": list(table.columns),
        "rows": table.n_rows,
        "labeled": table.labels is not None,
        "counts": table.class_counts() if table.labels is not None else None,
    }
    path.with_suffix(".json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def read_table(path) -> FeatureTable:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing feature table {path}")
    manifest_path = path.with_suffix(".json")
    if not manifest_path.exists():
        raise DataError(f"missing table manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    frame = pd.read_csv(path, float_precision="round_trip")
    columns = tuple(manifest["columns"])
    for c in columns + ("pix_i", "pix_j"):
        if c not in frame.columns:
            raise DataError(f"feature table {path} lacks column {c!r}")
    labels = frame["label"].to_numpy() if manifest["labeled"] else None
    X = frame[list(columns)].to_numpy(dtype=np.float64)
    pix = frame[["pix_i", "pix_j"]].to_numpy(dtype=np.int64)
    return FeatureTable(columns, X, labels, pix)
