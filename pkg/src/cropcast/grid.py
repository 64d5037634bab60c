"""Raster data model, binary raster I/O, and regridding.

Conventions
- Plate carrée grid in lon/lat degrees, square pixels, row 0 is the
  northernmost row; pixel (i, j) has its center at
  ``(lon_min + (j + 0.5) * cell, lat_max - (i + 0.5) * cell)``.
- A raster on disk is a little-endian row-major blob ``<name>.f32`` or
  ``<name>.f64`` next to a ``<name>.json`` manifest.
- The in-memory nodata sentinel is NaN by default; manifests may declare a
  finite sentinel for integer-like rasters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DataError

# Fixed degree-to-meter conversion used for all morphometric length scales.
METERS_PER_DEGREE = 111_320.0

CLASS_VALUES = (0, 1, 2, 3)

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass(frozen=True, slots=True)
class GridSpec:
    """Geometry of an analysis grid."""

    width: int
    height: int
    lon_min: float
    lat_max: float
    cell: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have at least one pixel per axis")
        if not (self.cell > 0):
            raise ValueError("cell size must be positive")
        for name in ("lon_min", "lat_max", "cell"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite grid field {name}")

    @property
    def lon_max(self) -> float:
        return self.lon_min + self.width * self.cell

    @property
    def lat_min(self) -> float:
        return self.lat_max - self.height * self.cell

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def lon_centers(self) -> np.ndarray:
        return self.lon_min + (np.arange(self.width) + 0.5) * self.cell

    def lat_centers(self) -> np.ndarray:
        return self.lat_max - (np.arange(self.height) + 0.5) * self.cell

    def pixel_center(self, i: int, j: int) -> tuple[float, float]:
        """(lon, lat) of the center of pixel (i, j)."""
        return (self.lon_min + (j + 0.5) * self.cell,
                self.lat_max - (i + 0.5) * self.cell)

    def overlaps(self, other: "GridSpec") -> bool:
        return (self.lon_min < other.lon_max and other.lon_min < self.lon_max
                and self.lat_min < other.lat_max and other.lat_min < self.lat_max)

    def bbox_mask(self, lat_top: float, lon_left: float,
                  lat_bottom: float, lon_right: float) -> np.ndarray:
        """Boolean (H, W) mask of pixels whose centers fall in the rectangle."""
        lat = self.lat_centers()[:, None]
        lon = self.lon_centers()[None, :]
        return ((lat <= lat_top) & (lat >= lat_bottom)
                & (lon >= lon_left) & (lon <= lon_right))

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "lon_min": self.lon_min, "lat_max": self.lat_max,
                "cell": self.cell}


@dataclass(slots=True)
class Raster:
    """A georeferenced 2D field with a nodata sentinel.

    ``values`` is float64 of shape (height, width); cells equal to ``nodata``
    (or NaN) take no part in computation and propagate as nodata.
    """

    spec: GridSpec
    values: np.ndarray
    nodata: float = field(default=math.nan)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.spec.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.spec.shape}")

    @property
    def valid(self) -> np.ndarray:
        mask = np.isfinite(self.values)
        if math.isfinite(self.nodata):
            mask &= self.values != self.nodata
        return mask

    def with_values(self, values: np.ndarray, nodata: float = math.nan) -> "Raster":
        return Raster(self.spec, values, nodata)

    def filled(self, fill: float = math.nan) -> np.ndarray:
        """Values with nodata cells replaced by ``fill``."""
        out = self.values.copy()
        out[~self.valid] = fill
        return out


def constant_raster(spec: GridSpec, value: float) -> Raster:
    return Raster(spec, np.full(spec.shape, float(value)))


# ---------------------------------------------------------------------------
# Binary raster format
# ---------------------------------------------------------------------------

def _paths(path) -> tuple[Path, Path | None]:
    """Resolve (manifest, blob) from a stem, manifest, or blob path."""
    p = Path(path)
    if p.suffix == ".json":
        return p, None
    if p.suffix in (".f32", ".f64"):
        return p.with_suffix(".json"), p
    return p.with_suffix(".json"), None


def read_manifest(path) -> dict:
    manifest_path, _ = _paths(path)
    if not manifest_path.exists():
        raise DataError(f"missing raster manifest {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("width", "height", "lon_min", "lat_max", "cell", "dtype"):
        if key not in meta:
            raise DataError(f"raster manifest {manifest_path} lacks '{key}'")
    return meta


def spec_from_manifest(meta: dict) -> GridSpec:
    try:
        return GridSpec(int(meta["width"]), int(meta["height"]),
                        float(meta["lon_min"]), float(meta["lat_max"]),
                        float(meta["cell"]))
    except ValueError as exc:
        raise DataError(f"invalid grid manifest: {exc}") from exc


def _nodata_from_manifest(meta: dict) -> float:
    raw = meta.get("nodata", "nan")
    if isinstance(raw, str):
        if raw.lower() != "nan":
            raise DataError(f"unrecognized nodata value {raw!r}")
        return math.nan
    return float(raw)


def read_raster(path) -> Raster:
    """Load a raster from its manifest + blob pair.

    ``path`` may be the stem, the ``.json`` manifest, or the blob itself.
    """
    manifest_path, blob_path = _paths(path)
    meta = read_manifest(manifest_path)
    spec = spec_from_manifest(meta)
    dtype = meta["dtype"]
    if dtype not in _DTYPES:
        raise DataError(f"unsupported raster dtype {dtype!r}")
    if blob_path is None:
        blob_path = manifest_path.with_suffix("." + dtype)
    if not blob_path.exists():
        raise DataError(f"missing raster blob {blob_path}")
    raw = np.fromfile(blob_path, dtype=_DTYPES[dtype])
    if raw.size != spec.n_pixels:
        raise DataError(
            f"raster blob {blob_path} holds {raw.size} values, "
            f"manifest says {spec.height}x{spec.width}")
    values = raw.astype(np.float64).reshape(spec.shape)
    return Raster(spec, values, _nodata_from_manifest(meta))


def write_raster(raster: Raster, path, dtype: str = "f64") -> Path:
    """Write manifest + blob; returns the manifest path."""
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported raster dtype {dtype!r}")
    manifest_path, blob_path = _paths(path)
    if blob_path is None:
        blob_path = manifest_path.with_suffix("." + dtype)
    elif blob_path.suffix != "." + dtype:
        raise ValueError(f"blob path {blob_path} does not match dtype {dtype}")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    meta = raster.spec.to_dict()
    meta["dtype"] = dtype
    meta["nodata"] = "nan" if math.isnan(raster.nodata) else raster.nodata
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    raster.values.astype(_DTYPES[dtype]).tofile(blob_path)
    return manifest_path


# ---------------------------------------------------------------------------
# Class masks
# ---------------------------------------------------------------------------

def validate_class_mask(mask: Raster) -> Raster:
    """Check that every valid cell holds an integer class label in {0,1,2,3}."""
    vals = mask.values[mask.valid]
    if vals.size and not np.isin(vals, CLASS_VALUES).all():
        bad = np.unique(vals[~np.isin(vals, CLASS_VALUES)])
        raise DataError(f"class mask holds non-class values {bad[:5]}")
    return mask


def class_onehot(mask: Raster, cls: int) -> Raster:
    """Indicator raster for one class; nodata propagates."""
    out = np.where(mask.values == cls, 1.0, 0.0)
    out[~mask.valid] = np.nan
    return Raster(mask.spec, out)


def scatter_to_raster(values: np.ndarray, pix: np.ndarray, spec: GridSpec) -> Raster:
    """Place per-row values back on the grid; untouched pixels are nodata."""
    out = np.full(spec.shape, np.nan)
    out[pix[:, 0], pix[:, 1]] = values
    return Raster(spec, out)


# ---------------------------------------------------------------------------
# Regridding
# ---------------------------------------------------------------------------

def regrid(src: Raster, target: GridSpec, method: str = "bilinear") -> Raster:
    """Resample ``src`` onto ``target`` by pixel-center sampling.

    ``nearest`` picks the closest source cell, ``bilinear`` blends the four
    surrounding cells with nodata-aware weight renormalization. Target pixels
    outside the source extent are nodata. Output always uses the NaN sentinel.
    """
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"unknown regrid method {method!r}")
    if target.n_pixels < 1:
        raise ValueError("degenerate target grid")
    if not src.spec.overlaps(target):
        raise ValueError("target grid does not overlap the source extent")

    s = src.spec
    lon = target.lon_centers()
    lat = target.lat_centers()
    fx = (lon - s.lon_min) / s.cell - 0.5          # fractional column
    fy = (s.lat_max - lat) / s.cell - 0.5          # fractional row
    fx2 = np.broadcast_to(fx[None, :], target.shape)
    fy2 = np.broadcast_to(fy[:, None], target.shape)

    slack = _kernels.SNAP_EPS
    inside = ((lon[None, :] >= s.lon_min - slack) & (lon[None, :] <= s.lon_max + slack)
              & (lat[:, None] >= s.lat_min - slack) & (lat[:, None] <= s.lat_max + slack))

    valid = src.valid
    if method == "nearest":
        ii = np.rint(fy2).astype(np.int64).clip(0, s.height - 1)
        jj = np.rint(fx2).astype(np.int64).clip(0, s.width - 1)
        out = np.where(valid[ii, jj], src.values[ii, jj], np.nan)
    else:
        flat = _kernels.bilinear_sample(src.filled(), valid,
                                        fy2.ravel(), fx2.ravel())
        out = flat.reshape(target.shape)
    out = np.where(inside, out, np.nan)
    return Raster(target, out)


def regrid_class(mask: Raster, target: GridSpec) -> Raster:
    """Regrid a class mask; labels are never interpolated."""
    return validate_class_mask(regrid(validate_class_mask(mask), target, "nearest"))


def rasters_equal(a: Raster, b: Raster) -> bool:
    """Bitwise equality of spec and values (NaNs compare equal)."""
    return a.spec == b.spec and np.array_equal(a.values, b.values, equal_nan=True)
