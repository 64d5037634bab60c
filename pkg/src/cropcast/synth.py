"""Synthetic world generator with a planted land-class rule.

Emits a DEM, daily climate series (historical plus scripted future runs),
and a class mask whose labels are a pure function of four realized decade
summaries: summer mean temperature, annual precipitation, annual count of
day-to-day temperature jumps, and elevation. The summaries are computed
with the same reductions the feature pipeline uses, so a trained model sees
features that determine the labels exactly; the rule and its fitted
thresholds are recorded in MANIFEST.json.

Geography: temperature falls with latitude and elevation, the east is arid
highland, day-to-day temperature volatility follows an independent smooth
"continentality" field, and windmax is pure noise everywhere — it can never
carry label information.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import climate
from ._kernels import gaussian_kernel, smooth_nodata
from .errors import DataError
from .grid import GridSpec, Raster, write_raster

DAYS_PER_YEAR = climate.DAYS_PER_YEAR

#: rule inputs, named by the feature-pipeline channels that realize them
CAUSAL_CHANNELS = ("t2m", "tp", "monTstep6", "DEM_1km")
NOISE_CHANNEL = "sfcWindmax"

_SUMMER = (5, 6, 7)  # June, July, August (0-based months)
_SUMMER_WEIGHTS = np.array([climate.MONTH_LENGTHS[m] for m in _SUMMER],
                           dtype=np.float64)

DEFAULT_WARMING = {"ssp-warm": 1.5, "ssp-hot": 4.0}
# precipitation multipliers at the end-of-century period: (south, north)
DEFAULT_PRECIP_FACTOR = {"ssp-warm": (1.0, 1.02), "ssp-hot": (0.75, 1.10)}


# ---------------------------------------------------------------------------
# Daily-series files: <stem>.f32 (days-major) + <stem>.json
# ---------------------------------------------------------------------------

def _series_paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".f32"), stem.with_suffix(".json")


def write_series(stem, values: np.ndarray, spec: GridSpec,
                 variable: str) -> Path:
    blob_path, man_path = _series_paths(stem)
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2 or values.shape[1] != spec.n_pixels:
        raise ValueError("series must be (days, n_pixels)")
    blob_path.write_bytes(values.tobytes())
    manifest = {"days": values.shape[0], "variable": variable,
                "dtype": "f32", **spec.to_dict()}
    man_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return man_path


def read_series(stem) -> tuple[np.memmap, GridSpec, dict]:
    blob_path, man_path = _series_paths(stem)
    if not man_path.exists():
        raise DataError(f"missing series manifest {man_path}")
    meta = json.loads(man_path.read_text())
    spec = GridSpec(meta["width"], meta["height"], meta["lon_min"],
                    meta["lat_max"], meta["cell"])
    shape = (meta["days"], spec.n_pixels)
    expect = shape[0] * shape[1] * 4
    if blob_path.stat().st_size != expect:
        raise DataError(f"series blob {blob_path} has wrong size")
    data = np.memmap(blob_path, dtype="<f4", mode="r", shape=shape)
    return data, spec, meta


# ---------------------------------------------------------------------------
# Static fields
# ---------------------------------------------------------------------------

def _smooth_field(rng: np.random.Generator, shape: tuple[int, int],
                  sigma_px: float) -> np.ndarray:
    """Unit-interval smooth random field."""
    noise = rng.normal(0.0, 1.0, shape)
    kernel = gaussian_kernel(sigma_px)
    field = smooth_nodata(noise, np.ones(shape, dtype=bool), kernel)
    lo, hi = field.min(), field.max()
    return (field - lo) / max(hi - lo, 1e-12)


def make_fields(spec: GridSpec, rng: np.random.Generator) -> dict:
    """Static geography: DEM plus the normalized driver fields."""
    lat = spec.lat_centers()[:, None] * np.ones((1, spec.width))
    lon = np.ones((spec.height, 1)) * spec.lon_centers()[None, :]
    latfrac = (lat - spec.lat_min) / (spec.lat_max - spec.lat_min)
    aridfrac = (lon - spec.lon_min) / (spec.lon_max - spec.lon_min)
    bumps = _smooth_field(rng, spec.shape, sigma_px=max(spec.width / 20, 2.0))
    elev_km = 0.25 + 1.2 * aridfrac ** 2 + 0.6 * bumps
    jumpfrac = _smooth_field(rng, spec.shape,
                             sigma_px=max(spec.width / 12, 2.0))
    humidfrac = _smooth_field(rng, spec.shape,
                              sigma_px=max(spec.width / 10, 2.0))
    flat = lambda a: np.ascontiguousarray(a, dtype=np.float64).ravel()
    return {
        "latfrac": flat(latfrac), "aridfrac": flat(aridfrac),
        "elev_km": flat(elev_km), "jumpfrac": flat(jumpfrac),
        "humidfrac": flat(humidfrac),
        "dem": Raster(spec, elev_km * 1000.0),
    }


# ---------------------------------------------------------------------------
# Daily climate model
# ---------------------------------------------------------------------------

def _daily_year(rng: np.random.Generator, fields: dict, warming_c: float,
                precip_scale: np.ndarray) -> dict[str, np.ndarray]:
    """One 365-day year of all variables, float32 (365, P).

    The generator draws a fixed sequence of random blocks per year, so the
    stream is identical no matter how callers batch the years.
    """
    latf = fields["latfrac"][None, :]
    arid = fields["aridfrac"][None, :]
    jump = fields["jumpfrac"][None, :]
    humid = fields["humidfrac"][None, :]
    elev = fields["elev_km"][None, :]
    doy = np.arange(DAYS_PER_YEAR, dtype=np.float64)[:, None]
    shape = (DAYS_PER_YEAR, latf.shape[1])

    n_t = rng.normal(0.0, 1.0, shape)
    n_max = rng.normal(0.0, 1.0, shape)
    n_min = rng.normal(0.0, 1.0, shape)
    n_dew = rng.normal(0.0, 1.0, shape)
    u_wet = rng.uniform(0.0, 1.0, shape)
    e_amt = rng.exponential(1.0, shape)
    g_wind = rng.gamma(2.0, 2.0, shape)

    seasonal = np.cos(2.0 * np.pi * (doy - 196.0) / 365.0)
    base = 22.0 - 18.0 * latf - 6.5 * elev + warming_c
    amp = 12.0 + 6.0 * latf
    sigma_t = 0.8 + 3.6 * jump
    tmean = base + amp * seasonal + sigma_t * n_t
    # wide deterministic diurnal band: freeze-thaw crossing counts are then
    # set by geometry rather than by the noise scale
    half_range = 4.0 + 1.5 * arid
    tmax = tmean + half_range + 0.8 * np.abs(n_max)
    tmin = tmean - half_range - 0.8 * np.abs(n_min)
    # air humidity is its own weather system, uncorrelated with the rule
    dewpoint = tmean - (2.0 + 12.0 * (1.0 - humid) + 1.5 * np.abs(n_dew))

    wet_season = np.cos(2.0 * np.pi * (doy - 15.0) / 365.0)
    p_wet = np.clip(0.10 + 0.30 * (1.0 - arid) + 0.08 * wet_season,
                    0.02, 0.95)
    annual_target = 300.0 + 700.0 * (1.0 - arid)
    mean_amount = annual_target / p_wet.sum(axis=0, keepdims=True)
    precip = (u_wet < p_wet) * (mean_amount * precip_scale[None, :] * e_amt)

    windmax = 3.0 + g_wind
    # snowpack tracks the smooth seasonal freeze scaled by moisture supply;
    # the daily noise scale must stay observable only through the jump counts
    swe = (0.5 + 2.5 * humid) * np.maximum(0.0, -(base + amp * seasonal))
    out = {"tmax": tmax, "tmin": tmin, "tmean": tmean, "precip": precip,
           "dewpoint": dewpoint, "windmax": windmax, "swe": swe}
    return {k: v.astype(np.float32) for k, v in out.items()}


def _generate_run(run_dir: Path, rng: np.random.Generator, fields: dict,
                  spec: GridSpec, years: int, warming_c: float,
                  precip_scale: np.ndarray) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    handles = {var: open(run_dir / f"{var}.f32", "wb")
               for var in climate.DAILY_VARIABLES}
    try:
        for _ in range(years):
            block = _daily_year(rng, fields, warming_c, precip_scale)
            for var in climate.DAILY_VARIABLES:
                handles[var].write(
                    np.ascontiguousarray(block[var], dtype="<f4").tobytes())
    finally:
        for h in handles.values():
            h.close()
    days = years * DAYS_PER_YEAR
    for var in climate.DAILY_VARIABLES:
        manifest = {"days": days, "variable": var, "dtype": "f32",
                    **spec.to_dict()}
        (run_dir / f"{var}.json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# Planted labels
# ---------------------------------------------------------------------------

def label_summaries(run_dir, chunk: int = 2048) -> dict[str, np.ndarray]:
    """The four rule inputs, computed with the feature pipeline's own
    monthly reductions so labels stay an exact function of the features."""
    tmean, spec, _ = read_series(Path(run_dir) / "tmean")
    precip, _, _ = read_series(Path(run_dir) / "precip")
    n = spec.n_pixels
    warm = np.empty(n)
    tp = np.empty(n)
    jumps = np.empty(n)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        t = np.asarray(tmean[:, sl], dtype=np.float64)
        p = np.asarray(precip[:, sl], dtype=np.float64)
        monthly_t = climate.monthly_mean(t)
        warm[sl] = (_SUMMER_WEIGHTS @ monthly_t[list(_SUMMER)]
                    ) / _SUMMER_WEIGHTS.sum()
        tp[sl] = climate.monthly_sum(p).sum(axis=0)
        jumps[sl] = climate.temp_jumps(t).sum(axis=0)
    return {"warm": warm, "tp": tp, "jumps": jumps}


def _zscore(x: np.ndarray) -> tuple[np.ndarray, float, float]:
    mu = float(x.mean())
    sd = float(max(x.std(), 1e-9))
    return (x - mu) / sd, mu, sd


def plant_labels(summaries: dict[str, np.ndarray], elev_m: np.ndarray,
                 proportions) -> tuple[np.ndarray, dict]:
    """Carve classes from two nonlinear scores by exact rank quantiles.

    Suitability wants warm, stable (few temperature jumps), low terrain,
    and not bone-dry; among suitable pixels the wettest become rainfed
    cropland, the driest need major irrigation, the middle minor. Rank
    thresholds make the class counts match ``proportions`` exactly.
    """
    proportions = np.asarray(proportions, dtype=np.float64)
    if proportions.shape != (4,) or abs(proportions.sum() - 1.0) > 1e-9:
        raise ValueError("need four class proportions summing to 1")
    z_w, mu_w, sd_w = _zscore(summaries["warm"])
    z_p, mu_p, sd_p = _zscore(summaries["tp"])
    z_j, mu_j, sd_j = _zscore(summaries["jumps"])
    z_e, mu_e, sd_e = _zscore(elev_m)

    # the jump penalty has a cliff: near it only the realized count decides,
    # so models cannot substitute smoother correlates of the volatility field
    jump_penalty = np.maximum(np.abs(z_j) - 0.3, 0.0)
    crop_score = (z_w - 2.0 * jump_penalty - 0.6 * np.maximum(z_e, 0.0)
                  - 0.35 * np.maximum(-z_p, 0.0))
    wet_score = z_p + 0.25 * z_w - 0.5 * jump_penalty

    n = crop_score.size
    n0 = int(round(proportions[0] * n))
    n1 = int(round(proportions[1] * n))
    n3 = int(round(proportions[3] * n))
    labels = np.full(n, 2, dtype=np.int64)
    order = np.argsort(crop_score, kind="stable")
    labels[order[:n0]] = 0
    crop_idx = order[n0:]
    if n1 + n3 > crop_idx.size:
        raise ValueError("class proportions leave no room for class 2")
    by_wet = crop_idx[np.argsort(wet_score[crop_idx], kind="stable")]
    labels[by_wet[:n1]] = 1
    labels[by_wet[by_wet.size - n3:]] = 3

    rule = {
        "inputs": list(CAUSAL_CHANNELS),
        "noise_channel": NOISE_CHANNEL,
        "standardization": {
            "warm": [mu_w, sd_w], "tp": [mu_p, sd_p],
            "jumps": [mu_j, sd_j], "elev_m": [mu_e, sd_e],
        },
        "scores": {
            "crop_score": "z_warm - 2.0*max(|z_jumps| - 0.3, 0)"
                          " - 0.6*max(z_elev, 0) - 0.35*max(-z_tp, 0)",
            "wet_score": "z_tp + 0.25*z_warm"
                         " - 0.5*max(|z_jumps| - 0.3, 0)",
        },
        "rank_thresholds": {
            "crop_score_cut": float(crop_score[order[n0 - 1]]) if n0 else None,
            "major_wet_cut": float(wet_score[by_wet[n1 - 1]]) if n1 else None,
            "rainfed_wet_cut": float(wet_score[by_wet[by_wet.size - n3]])
            if n3 else None,
        },
        "proportions": proportions.tolist(),
        "counts": {str(c): int((labels == c).sum()) for c in range(4)},
    }
    return labels, rule


# ---------------------------------------------------------------------------
# World generation
# ---------------------------------------------------------------------------

def generate_world(out_dir, spec: GridSpec, seed: int, *,
                   baseline_years: int = 10, future_years: int = 2,
                   class_proportions=(0.40, 0.15, 0.20, 0.25),
                   climate_models=("alpha", "beta"),
                   ssps=("ssp-warm", "ssp-hot"),
                   periods=("2020-2030", "2040-2050"),
                   warming: dict | None = None,
                   precip_factor: dict | None = None,
                   label_noise: float = 0.0,
                   include_futures: bool = True) -> dict:
    """Write the complete synthetic corpus; returns the manifest dict."""
    warming = dict(DEFAULT_WARMING if warming is None else warming)
    precip_factor = dict(DEFAULT_PRECIP_FACTOR if precip_factor is None
                         else precip_factor)
    for ssp in ssps:
        if ssp not in warming or ssp not in precip_factor:
            raise ValueError(f"no drift parameters for ssp {ssp!r}")
    if not 0.0 <= label_noise < 0.5:
        raise ValueError("label_noise must lie in [0, 0.5)")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    ss_dem, ss_hist, ss_future, ss_noise = root.spawn(4)

    fields = make_fields(spec, np.random.default_rng(ss_dem))
    write_raster(fields["dem"], out_dir / "dem")

    no_scale = np.ones(spec.n_pixels)
    _generate_run(out_dir / "historical", np.random.default_rng(ss_hist),
                  fields, spec, baseline_years, 0.0, no_scale)

    summaries = label_summaries(out_dir / "historical")
    labels, rule = plant_labels(summaries, fields["dem"].values.ravel(),
                                class_proportions)
    n_relabel = int(round(label_noise * labels.size))
    if n_relabel:
        # survey-style annotation noise: a seeded subset of pixels gets a
        # uniformly drawn *different* class, so no pixel is a silent no-op
        rng_noise = np.random.default_rng(ss_noise)
        flip = rng_noise.choice(labels.size, size=n_relabel, replace=False)
        labels[flip] = (labels[flip]
                        + rng_noise.integers(1, 4, size=n_relabel)) % 4
    rule["label_noise"] = float(label_noise)
    rule["n_relabel"] = n_relabel
    mask = Raster(spec, labels.reshape(spec.shape).astype(np.float64))
    write_raster(mask, out_dir / "mask")

    model_drift = (np.linspace(0.9, 1.1, len(climate_models))
                   if len(climate_models) > 1 else np.array([1.0]))
    period_frac = {p: (i + 1) / len(periods) for i, p in enumerate(periods)}
    runs = []
    if include_futures:
        future_seeds = ss_future.spawn(
            len(climate_models) * len(ssps) * len(periods))
        k = 0
        for im, model in enumerate(climate_models):
            for ssp in ssps:
                for period in periods:
                    frac = period_frac[period] * model_drift[im]
                    dt = warming[ssp] * frac
                    south, north = precip_factor[ssp]
                    factor = (1.0 + (south - 1.0) * frac) * (
                        1.0 - fields["latfrac"]) + (
                        1.0 + (north - 1.0) * frac) * fields["latfrac"]
                    name = f"{model}_{ssp}_{period}"
                    _generate_run(out_dir / "future" / name,
                                  np.random.default_rng(future_seeds[k]),
                                  fields, spec, future_years, dt, factor)
                    runs.append({"name": name, "climate_model": model,
                                 "ssp": ssp, "period": period,
                                 "warming_c": dt,
                                 "precip_factor_south_north": [
                                     1.0 + (south - 1.0) * frac,
                                     1.0 + (north - 1.0) * frac]})
                    k += 1

    manifest = {
        "grid": spec.to_dict(),
        "seed": seed,
        "baseline_years": baseline_years,
        "future_years": future_years,
        "variables": list(climate.DAILY_VARIABLES),
        "rule": rule,
        "runs": runs,
    }
    (out_dir / "MANIFEST.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
