"""Terrain features: elevation plus ten morphometric variables at four scales.

Each scale low-passes the DEM with a Gaussian (sigma in pixels = scale_km /
cell_km / 6, truncated at 3 sigma, nodata-renormalized) and then fits a
quadratic z = a x^2 + b y^2 + c xy + d x + e y + f on every interior 3x3
window of the smoothed surface. The ten variables derive from the patch
coefficients:

=========  ================================================================
morf_1     slope (degrees)
morf_2     aspect: compass azimuth of steepest descent, [0, 360)
morf_3     shaded relief, sun from the east (azimuth 90°)
morf_4     profile convexity
morf_5     plan convexity
morf_6     longitudinal curvature
morf_7     cross-sectional curvature
morf_8     minimum curvature (saddle forms)
morf_9     maximum curvature (hilled forms)
morf_10    shaded relief, sun from the south (azimuth 180°)
=========  ================================================================

Local axes are metric: x east, y north (row 0 is the northernmost row), with
a fixed 111,320 m/degree conversion on both axes. Border pixels and windows
touching nodata come back as nodata.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels
from .grid import METERS_PER_DEGREE, Raster

TERRAIN_SCALES_KM = (3.0, 11.0, 33.0, 47.0)

MORPH_NAMES = tuple(f"morf_{k}" for k in range(1, 11))

#: All 41 terrain feature names in canonical column order (scale-major).
TERRAIN_FEATURE_NAMES = ("DEM_1km",) + tuple(
    f"morf_{k}_{int(L)}km" for L in TERRAIN_SCALES_KM for k in range(1, 11)
)

# Below this squared-gradient, a cell counts as flat: aspect and the
# slope-dependent curvatures are 0 by convention.
_FLAT_EPS = 1e-12

DEFAULT_SUN_ALTITUDE_DEG = 45.0


def sigma_px(scale_km: float, cell_deg: float) -> float:
    cell_km = cell_deg * METERS_PER_DEGREE / 1000.0
    return (scale_km / cell_km) / 6.0


def smooth(dem: Raster, sigma: float) -> Raster:
    """Nodata-aware Gaussian low-pass of the DEM."""
    kernel = _kernels.gaussian_kernel(sigma)
    out = _kernels.smooth_nodata(dem.filled(), dem.valid, kernel)
    return Raster(dem.spec, out)


def _sun_vector(azimuth_deg: float, altitude_deg: float) -> tuple[float, float, float]:
    az = math.radians(azimuth_deg)
    alt = math.radians(altitude_deg)
    return (math.sin(az) * math.cos(alt),   # east
            math.cos(az) * math.cos(alt),   # north
            math.sin(alt))                  # up


def _shaded_relief(d, e, azimuth_deg, altitude_deg):
    sx, sy, sz = _sun_vector(azimuth_deg, altitude_deg)
    norm = np.sqrt(1.0 + d * d + e * e)
    cos_inc = (-d * sx - e * sy + sz) / norm
    return np.clip(cos_inc, 0.0, 1.0)


def morphometrics(surface: Raster, cell_m: float | None = None,
                  sun_altitude: float = DEFAULT_SUN_ALTITUDE_DEG,
                  ) -> dict[str, Raster]:
    """The ten morphometric rasters of a (smoothed) surface.

    ``cell_m`` defaults to the grid cell at 111,320 m/degree. The border ring
    and every window touching nodata are nodata in all outputs.
    """
    spec = surface.spec
    if spec.height < 3 or spec.width < 3:
        raise ValueError("morphometrics needs a raster of at least 3x3")
    if cell_m is None:
        cell_m = spec.cell * METERS_PER_DEGREE

    a, b, c, d, e, _f, ok = _kernels.patch_fit(surface.filled(), surface.valid,
                                               cell_m)
    g2 = d * d + e * e
    flat = g2 < _FLAT_EPS
    g2s = np.where(flat, 1.0, g2)  # safe denominator; flat cells overwritten

    slope = np.degrees(np.arctan(np.sqrt(g2)))
    aspect = np.where(flat, 0.0,
                      np.degrees(np.arctan2(-d, -e)) % 360.0)
    east = _shaded_relief(d, e, 90.0, sun_altitude)
    south = _shaded_relief(d, e, 180.0, sun_altitude)

    down = a * d * d + b * e * e + c * d * e       # along-gradient form
    across = a * e * e + b * d * d - c * d * e     # cross-gradient form
    profile = np.where(flat, 0.0, -2.0 * down / (g2s * (1.0 + g2s) ** 1.5))
    plan = np.where(flat, 0.0, 2.0 * across / g2s ** 1.5)
    longitudinal = np.where(flat, 0.0, -2.0 * down / g2s)
    cross = np.where(flat, 0.0, -2.0 * across / g2s)

    disc = np.sqrt((a - b) ** 2 + c * c)
    k_min = -a - b - disc
    k_max = -a - b + disc

    planes = (slope, aspect, east, profile, plan,
              longitudinal, cross, k_min, k_max, south)
    out = {}
    for name, plane in zip(MORPH_NAMES, planes):
        full = np.full(spec.shape, np.nan)
        full[1:-1, 1:-1] = np.where(ok, plane, np.nan)
        out[name] = Raster(spec, full)
    return out


def terrain_feature_stack(dem: Raster,
                          scales_km: tuple[float, ...] = TERRAIN_SCALES_KM,
                          sun_altitude: float = DEFAULT_SUN_ALTITUDE_DEG,
                          ) -> dict[str, Raster]:
    """Elevation plus per-scale morphometrics; 41 rasters at default scales."""
    if list(scales_km) != sorted(scales_km) or len(set(scales_km)) != len(scales_km):
        raise ValueError("scales must be strictly increasing")
    out = {"DEM_1km": dem}
    for scale in scales_km:
        surface = smooth(dem, sigma_px(scale, dem.spec.cell))
        morphs = morphometrics(surface, sun_altitude=sun_altitude)
        for k, name in enumerate(MORPH_NAMES, start=1):
            out[f"morf_{k}_{int(scale)}km"] = morphs[name]
    return out
