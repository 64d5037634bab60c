"""Climate feature derivation from daily per-pixel series.

Eleven variables, ten of them monthly (12 decade-averaged values each) plus a
single annual drought index, for 121 features per pixel:

====================  =====================================================
tasmax_MM             days with tmax above the baseline monthly p95
tasmin_MM             days with tmin below the baseline monthly p5
t2m_MM                mean daily-mean temperature
pr_p95_MM             days with precipitation above the baseline monthly p95
sfcWindmax_MM         days with max wind above the baseline monthly p95
fy_MM                 days with the Nesterov fire index above 4000
monT0ud_MM            days with tmin < 0 < tmax
monTstep6_MM          days with |day-over-day tmean change| > 6 (strict)
tp_MM                 total precipitation (mm/month)
snw_MM                mean snow water equivalent
12m_SPI               standardized precipitation index, 12-month window
====================  =====================================================

All series use a 365-day no-leap calendar. Inputs are (days, pixels) arrays;
every function is pure and per-pixel, so results are invariant to how pixels
are batched. Aggregates are decade means: per-month value per year, then the
arithmetic mean across years.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import gammainc

from . import _kernels
from .errors import DataError

MONTH_LENGTHS = np.array([31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31])
MONTH_STARTS = np.concatenate([[0], np.cumsum(MONTH_LENGTHS)[:-1]])
DAYS_PER_YEAR = 365

#: Order of the ten monthly variables inside the assembled feature table.
MONTHLY_FEATURE_VARS = ("tasmax", "tasmin", "t2m", "pr_p95", "sfcWindmax",
                        "fy", "monT0ud", "monTstep6", "tp", "snw")

SPI_FEATURE_NAME = "12m_SPI"

#: All 121 climate feature names in canonical column order.
CLIMATE_FEATURE_NAMES = tuple(
    f"{var}_{mm:02d}" for var in MONTHLY_FEATURE_VARS for mm in range(1, 13)
) + (SPI_FEATURE_NAME,)

#: Daily input variables a climate stack must provide.
DAILY_VARIABLES = ("tmax", "tmin", "tmean", "precip", "dewpoint", "windmax", "swe")


def n_years_of(series: np.ndarray) -> int:
    days = series.shape[0]
    if days == 0 or days % DAYS_PER_YEAR:
        raise DataError(f"daily series of {days} days is not whole no-leap years")
    return days // DAYS_PER_YEAR


def month_indices(n_years: int) -> np.ndarray:
    """0-based calendar month of each day of an ``n_years`` series."""
    one = np.repeat(np.arange(12), MONTH_LENGTHS)
    return np.tile(one, n_years).astype(np.int64)


def _by_year(series: np.ndarray) -> np.ndarray:
    """(days, P) -> (years, 365, P) view."""
    years = n_years_of(series)
    return series.reshape(years, DAYS_PER_YEAR, *series.shape[1:])


# ---------------------------------------------------------------------------
# Percentile thresholds (fit on baseline only)
# ---------------------------------------------------------------------------

def fit_percentiles(baseline: np.ndarray, q: float) -> np.ndarray:
    """Per-calendar-month, per-pixel empirical quantile of baseline days.

    Linear interpolation between order statistics; all years of a month pool
    together. Returns a (12, P) array.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must lie strictly inside (0, 1)")
    by_year = _by_year(baseline)
    out = np.empty((12, baseline.shape[1]))
    for m in range(12):
        sl = slice(MONTH_STARTS[m], MONTH_STARTS[m] + MONTH_LENGTHS[m])
        pool = by_year[:, sl].reshape(-1, baseline.shape[1])
        out[m] = np.quantile(pool, q, axis=0)
    return out


def count_exceedance(series: np.ndarray, thresholds: np.ndarray,
                     direction: str) -> np.ndarray:
    """Decade-mean monthly count of days strictly beyond the threshold."""
    if direction not in ("above", "below"):
        raise ValueError(f"direction must be 'above' or 'below', got {direction!r}")
    by_year = _by_year(series)
    years = by_year.shape[0]
    out = np.empty((12, series.shape[1]))
    for m in range(12):
        sl = slice(MONTH_STARTS[m], MONTH_STARTS[m] + MONTH_LENGTHS[m])
        month = by_year[:, sl]
        thr = thresholds[m][None, None, :]
        hits = month > thr if direction == "above" else month < thr
        out[m] = hits.sum(axis=(0, 1)) / years
    return out


def _monthly_reduce(series: np.ndarray, how: str) -> np.ndarray:
    by_year = _by_year(series)
    sums = np.add.reduceat(by_year, MONTH_STARTS, axis=1)  # (years, 12, P)
    if how == "mean":
        sums = sums / MONTH_LENGTHS[None, :, None]
    return sums.mean(axis=0)


def monthly_mean(series: np.ndarray) -> np.ndarray:
    """Decade mean of per-month daily means (t2m, snw)."""
    return _monthly_reduce(series, "mean")


def monthly_sum(series: np.ndarray) -> np.ndarray:
    """Decade mean of per-month totals (tp, mm/month)."""
    return _monthly_reduce(series, "sum")


# ---------------------------------------------------------------------------
# Event counters
# ---------------------------------------------------------------------------

def nesterov_fy(tmax: np.ndarray, dewpoint: np.ndarray,
                precip: np.ndarray) -> np.ndarray:
    """Decade-mean days per month with the Nesterov index above 4000.

    The index resets on > 3 mm rain, accumulates tmax * (tmax - dewpoint)
    (spread clamped at zero) on above-freezing days, and carries over
    unchanged on freezing dry days — including across year boundaries.
    """
    years = n_years_of(tmax)
    counts = _kernels.nesterov_counts(tmax, dewpoint, precip,
                                      month_indices(years))
    return counts / years


def zero_crossings(tmin: np.ndarray, tmax: np.ndarray) -> np.ndarray:
    """Decade-mean days per month where the temperature straddles 0 °C."""
    flags = ((tmin < 0.0) & (tmax > 0.0)).astype(np.float64)
    return monthly_sum(flags)


def temp_jumps(tmean: np.ndarray) -> np.ndarray:
    """Decade-mean days per month with |tmean(d) - tmean(d-1)| > 6 (strict).

    A jump belongs to the month of the later day; the first day of the whole
    series has no predecessor and never counts.
    """
    flags = np.zeros_like(tmean)
    flags[1:] = (np.abs(np.diff(tmean, axis=0)) > 6.0).astype(np.float64)
    return monthly_sum(flags)


# ---------------------------------------------------------------------------
# Standardized precipitation index (12-month window)
# ---------------------------------------------------------------------------

# Rational approximation for the inverse standard-normal CDF,
# |error| < 4.5e-4 over (0, 1).
_INV_C = (2.515517, 0.802853, 0.010328)
_INV_D = (1.432788, 0.189269, 0.001308)

# Cumulative probabilities are clamped into this open interval before
# inversion so SPI stays finite (|SPI| <= ~5.2) even for values far outside
# the fitted distribution.
_H_EPS = 1e-7


def inv_norm_cdf(p: np.ndarray) -> np.ndarray:
    """Approximate standard-normal quantile function."""
    p = np.asarray(p, dtype=np.float64)
    lower = p < 0.5
    pp = np.where(lower, p, 1.0 - p)
    pp = np.clip(pp, 1e-300, 0.5)
    t = np.sqrt(-2.0 * np.log(pp))
    num = _INV_C[0] + t * (_INV_C[1] + t * _INV_C[2])
    den = 1.0 + t * (_INV_D[0] + t * (_INV_D[1] + t * _INV_D[2]))
    z = t - num / den
    return np.where(lower, -z, z)


def monthly_totals(precip: np.ndarray) -> np.ndarray:
    """(days, P) daily precip -> (12*years, P) calendar-month totals."""
    by_year = _by_year(precip)
    sums = np.add.reduceat(by_year, MONTH_STARTS, axis=1)
    return sums.reshape(-1, precip.shape[1])


def rolling_12m(monthly: np.ndarray) -> np.ndarray:
    """12-month rolling sums ending at each month; first 11 are NaN."""
    csum = np.cumsum(monthly, axis=0, dtype=np.float64)
    out = np.full_like(monthly, np.nan, dtype=np.float64)
    out[11] = csum[11]
    out[12:] = csum[12:] - csum[:-12]
    return out


@dataclass(slots=True)
class SpiParams:
    """Per-calendar-month gamma mixture fitted on baseline rolling sums."""

    q_zero: np.ndarray   # (12, P) probability mass at zero
    alpha: np.ndarray    # (12, P) gamma shape
    theta: np.ndarray    # (12, P) gamma scale


def fit_spi(baseline_precip: np.ndarray) -> SpiParams:
    """Fit the SPI reference distribution from baseline daily precipitation.

    For each calendar month the defined 12-month rolling sums across baseline
    years (the first year contributes only December) are split into a zero
    mass ``q`` and a gamma fit on the nonzero values via Thom's closed-form
    approximation:

        A = ln(mean) - mean(ln x),  alpha = (1 + sqrt(1 + 4A/3)) / (4A),
        theta = mean / alpha

    with A floored at 1e-9 for near-constant samples.
    """
    years = n_years_of(baseline_precip)
    if years < 4:
        raise DataError(f"SPI needs at least 4 baseline years, got {years}")
    sums = rolling_12m(monthly_totals(baseline_precip))
    n_pix = baseline_precip.shape[1]
    q = np.zeros((12, n_pix))
    alpha = np.ones((12, n_pix))
    theta = np.ones((12, n_pix))
    for m in range(12):
        x = sums[m::12]
        x = x[np.isfinite(x).all(axis=1)]
        nz = x > 0.0
        n_nz = nz.sum(axis=0)
        q[m] = 1.0 - n_nz / x.shape[0]
        safe = np.where(nz, x, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            mean = np.where(nz, x, 0.0).sum(axis=0) / np.maximum(n_nz, 1)
            mean_log = np.where(nz, np.log(safe), 0.0).sum(axis=0) / np.maximum(n_nz, 1)
            a = np.log(np.maximum(mean, 1e-300)) - mean_log
        a = np.maximum(a, 1e-9)
        al = (1.0 + np.sqrt(1.0 + 4.0 * a / 3.0)) / (4.0 * a)
        has = n_nz > 0
        alpha[m] = np.where(has, al, 1.0)
        theta[m] = np.where(has, mean / al, 1.0)
    if (q == 1.0).any():
        warnings.warn("all-zero baseline month: SPI pinned to 0 there",
                      stacklevel=2)
    return SpiParams(q, alpha, theta)


def spi_monthly(precip: np.ndarray, params: SpiParams) -> np.ndarray:
    """Monthly SPI series (12*years, P); the first 11 months are NaN.

    H(x) = q + (1-q) * GammaCDF(x; alpha, theta), mapped through the inverse
    normal CDF. Months whose baseline was all zeros return SPI 0.
    """
    sums = rolling_12m(monthly_totals(precip))
    out = np.full_like(sums, np.nan)
    for m in range(12):
        idx = np.arange(m, sums.shape[0], 12)
        x = sums[idx]
        defined = np.isfinite(x)
        g = gammainc(params.alpha[m][None, :],
                     np.maximum(x, 0.0) / params.theta[m][None, :])
        h = params.q_zero[m][None, :] + (1.0 - params.q_zero[m][None, :]) * g
        h = np.clip(h, _H_EPS, 1.0 - _H_EPS)
        spi = inv_norm_cdf(h)
        spi = np.where(params.q_zero[m][None, :] >= 1.0, 0.0, spi)
        out[idx] = np.where(defined, spi, np.nan)
    return out


def spi_12m(precip: np.ndarray, params: SpiParams) -> np.ndarray:
    """Single annual SPI feature: decade mean of the defined monthly values."""
    monthly = spi_monthly(precip, params)
    return np.nanmean(monthly, axis=0)


# ---------------------------------------------------------------------------
# Feature-block assembly
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class ClimateThresholds:
    """Baseline-fitted exceedance thresholds plus the SPI reference fit."""

    tasmax_p95: np.ndarray
    tasmin_p5: np.ndarray
    precip_p95: np.ndarray
    wind_p95: np.ndarray
    spi: SpiParams

    def validate(self) -> None:
        for name, arr in (("tasmax_p95", self.tasmax_p95),
                          ("tasmin_p5", self.tasmin_p5),
                          ("precip_p95", self.precip_p95),
                          ("wind_p95", self.wind_p95)):
            if arr.shape[0] != 12:
                raise ValueError(f"{name} must have 12 monthly rows")


def fit_thresholds(baseline: Mapping[str, np.ndarray]) -> ClimateThresholds:
    """Fit all percentile thresholds and the SPI reference on baseline data."""
    return ClimateThresholds(
        tasmax_p95=fit_percentiles(baseline["tmax"], 0.95),
        tasmin_p5=fit_percentiles(baseline["tmin"], 0.05),
        precip_p95=fit_percentiles(baseline["precip"], 0.95),
        wind_p95=fit_percentiles(baseline["windmax"], 0.95),
        spi=fit_spi(baseline["precip"]),
    )


def climate_feature_block(stack: Mapping[str, np.ndarray],
                          thresholds: ClimateThresholds) -> np.ndarray:
    """All 121 climate features for a block of pixels.

    ``stack`` maps each daily variable to a (days, P) array on a shared
    calendar. Returns (121, P) rows in ``CLIMATE_FEATURE_NAMES`` order.
    """
    missing = [v for v in DAILY_VARIABLES if v not in stack]
    if missing:
        raise DataError(f"daily stack lacks variables {missing}")
    monthly = {
        "tasmax": count_exceedance(stack["tmax"], thresholds.tasmax_p95, "above"),
        "tasmin": count_exceedance(stack["tmin"], thresholds.tasmin_p5, "below"),
        "t2m": monthly_mean(stack["tmean"]),
        "pr_p95": count_exceedance(stack["precip"], thresholds.precip_p95, "above"),
        "sfcWindmax": count_exceedance(stack["windmax"], thresholds.wind_p95, "above"),
        "fy": nesterov_fy(stack["tmax"], stack["dewpoint"], stack["precip"]),
        "monT0ud": zero_crossings(stack["tmin"], stack["tmax"]),
        "monTstep6": temp_jumps(stack["tmean"]),
        "tp": monthly_sum(stack["precip"]),
        "snw": monthly_mean(stack["swe"]),
    }
    n_pix = stack["tmax"].shape[1]
    out = np.empty((len(CLIMATE_FEATURE_NAMES), n_pix))
    row = 0
    for var in MONTHLY_FEATURE_VARS:
        out[row:row + 12] = monthly[var]
        row += 12
    out[row] = spi_12m(stack["precip"], thresholds.spi)
    assert row + 1 == 121
    return out
