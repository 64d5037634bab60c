"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen at import time from the ``CROPCAST_NUMBA`` environment
variable ("0", "false" or "off" forces the numpy path) and can be switched
explicitly with :func:`set_backend`. Both paths implement identical math;
``benchmarks/bench_kernels.py`` compares their throughput.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.ndimage import correlate1d

_NB_OK = False
try:  # pragma: no cover - exercised indirectly via backend dispatch
    from numba import njit

    _NB_OK = True
except ImportError:  # pragma: no cover
    njit = None

_ENV = os.environ.get("CROPCAST_NUMBA", "1").strip().lower()
_BACKEND = "numba" if (_NB_OK and _ENV not in ("0", "false", "off")) else "numpy"

# Positions closer than this fraction of a cell snap onto the source lattice,
# so resampling a raster onto its own grid is bit-exact.
SNAP_EPS = 1e-9

NESTEROV_RAIN_RESET_MM = 3.0
NESTEROV_THRESHOLD = 4000.0


def set_backend(name: str) -> None:
    """Force the kernel backend ("numba" or "numpy")."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _NB_OK:
        raise ValueError("numba is not importable in this environment")
    _BACKEND = name


def active_backend() -> str:
    return _BACKEND


# ---------------------------------------------------------------------------
# Nesterov fire-danger accumulation
# ---------------------------------------------------------------------------

def _nesterov_counts_np(tmax, dew, precip, month_idx):
    n_days, n_pix = tmax.shape
    counts = np.zeros((12, n_pix))
    g = np.zeros(n_pix)
    for d in range(n_days):
        tm = tmax[d]
        wet = precip[d] > NESTEROV_RAIN_RESET_MM
        inc = np.where(tm > 0.0, tm * np.maximum(tm - dew[d], 0.0), 0.0)
        g = np.where(wet, 0.0, g + inc)
        counts[month_idx[d]] += g > NESTEROV_THRESHOLD
    return counts


def _nesterov_counts_nb_impl(tmax, dew, precip, month_idx):  # pragma: no cover
    n_days, n_pix = tmax.shape
    counts = np.zeros((12, n_pix))
    g = np.zeros(n_pix)
    for d in range(n_days):
        m = month_idx[d]
        for p in range(n_pix):
            if precip[d, p] > NESTEROV_RAIN_RESET_MM:
                g[p] = 0.0
            elif tmax[d, p] > 0.0:
                spread = tmax[d, p] - dew[d, p]
                if spread > 0.0:
                    g[p] += tmax[d, p] * spread
            if g[p] > NESTEROV_THRESHOLD:
                counts[m, p] += 1.0
    return counts


def nesterov_counts(tmax, dew, precip, month_idx):
    """Count days per calendar month with the cumulative index above 4000.

    The index resets to zero on days with rain above 3 mm, accumulates
    ``tmax * (tmax - dewpoint)`` on above-freezing days (negative spread
    clamped to zero) and persists unchanged on freezing dry days. Inputs are
    (days, pixels) arrays; ``month_idx`` holds the 0-based calendar month of
    each day. Returns (12, pixels) total counts over all years.
    """
    tmax = np.ascontiguousarray(tmax, dtype=np.float64)
    dew = np.ascontiguousarray(dew, dtype=np.float64)
    precip = np.ascontiguousarray(precip, dtype=np.float64)
    month_idx = np.ascontiguousarray(month_idx, dtype=np.int64)
    if _BACKEND == "numba":
        return _nesterov_counts_nb(tmax, dew, precip, month_idx)
    return _nesterov_counts_np(tmax, dew, precip, month_idx)


# ---------------------------------------------------------------------------
# Nodata-aware separable Gaussian smoothing
# ---------------------------------------------------------------------------

def gaussian_kernel(sigma_px: float) -> np.ndarray:
    """Discrete Gaussian taps truncated at 3 sigma, normalized to sum 1."""
    if sigma_px <= 0:
        raise ValueError("sigma must be positive")
    radius = max(1, int(math.ceil(3.0 * sigma_px)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_px) ** 2)
    return k / k.sum()


def _smooth_nodata_np(values, valid, kernel):
    w = valid.astype(np.float64)
    a = np.where(valid, values, 0.0)
    num = correlate1d(a, kernel, axis=0, mode="constant", cval=0.0)
    num = correlate1d(num, kernel, axis=1, mode="constant", cval=0.0)
    den = correlate1d(w, kernel, axis=0, mode="constant", cval=0.0)
    den = correlate1d(den, kernel, axis=1, mode="constant", cval=0.0)
    out = np.full(values.shape, np.nan)
    ok = den > 1e-12
    out[ok] = num[ok] / den[ok]
    return out


def _smooth_nodata_nb_impl(values, valid, kernel):  # pragma: no cover
    h, w = values.shape
    radius = kernel.shape[0] // 2
    a = np.zeros((h, w))
    m = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if valid[i, j]:
                a[i, j] = values[i, j]
                m[i, j] = 1.0
    # pass 1: along columns (axis 0)
    a1 = np.zeros((h, w))
    m1 = np.zeros((h, w))
    for i in range(h):
        for k in range(kernel.shape[0]):
            src = i + k - radius
            if 0 <= src < h:
                kv = kernel[k]
                for j in range(w):
                    a1[i, j] += kv * a[src, j]
                    m1[i, j] += kv * m[src, j]
    # pass 2: along rows (axis 1)
    out = np.full((h, w), np.nan)
    for i in range(h):
        for j in range(w):
            num = 0.0
            den = 0.0
            for k in range(kernel.shape[0]):
                src = j + k - radius
                if 0 <= src < w:
                    num += kernel[k] * a1[i, src]
                    den += kernel[k] * m1[i, src]
            if den > 1e-12:
                out[i, j] = num / den
    return out


def smooth_nodata(values, valid, kernel):
    """Separable Gaussian smoothing with per-pixel weight renormalization.

    Invalid cells contribute nothing; the kernel mass that falls on them (or
    beyond the edges) is renormalized away. Cells with no valid neighbor in
    range come back as NaN.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if _BACKEND == "numba":
        return _smooth_nodata_nb(values, valid, kernel)
    return _smooth_nodata_np(values, valid, kernel)


# ---------------------------------------------------------------------------
# Bilinear sampling at fractional source positions
# ---------------------------------------------------------------------------

def _bilinear_sample_np(src, valid, fy, fx):
    h, w = src.shape
    fy = fy.copy()
    fx = fx.copy()
    ry = np.rint(fy)
    rx = np.rint(fx)
    fy[np.abs(fy - ry) < SNAP_EPS] = ry[np.abs(fy - ry) < SNAP_EPS]
    fx[np.abs(fx - rx) < SNAP_EPS] = rx[np.abs(fx - rx) < SNAP_EPS]
    i0 = np.floor(fy).astype(np.int64)
    j0 = np.floor(fx).astype(np.int64)
    wy = fy - i0
    wx = fx - j0

    out_num = np.zeros(fy.shape)
    out_den = np.zeros(fy.shape)
    for di, dj in ((0, 0), (0, 1), (1, 0), (1, 1)):
        ii = i0 + di
        jj = j0 + dj
        wgt = (wy if di else 1.0 - wy) * (wx if dj else 1.0 - wx)
        ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w) & (wgt > 0.0)
        ii_c = np.clip(ii, 0, h - 1)
        jj_c = np.clip(jj, 0, w - 1)
        ok &= valid[ii_c, jj_c]
        out_num += np.where(ok, wgt * src[ii_c, jj_c], 0.0)
        out_den += np.where(ok, wgt, 0.0)

    out = np.full(fy.shape, np.nan)
    keep = out_den > 1e-12
    out[keep] = out_num[keep] / out_den[keep]
    return out


def _bilinear_sample_nb_impl(src, valid, fy, fx):  # pragma: no cover
    h, w = src.shape
    n = fy.shape[0]
    out = np.full(n, np.nan)
    for p in range(n):
        y = fy[p]
        x = fx[p]
        ry = round(y)
        rx = round(x)
        if abs(y - ry) < SNAP_EPS:
            y = ry
        if abs(x - rx) < SNAP_EPS:
            x = rx
        i0 = int(math.floor(y))
        j0 = int(math.floor(x))
        wy = y - i0
        wx = x - j0
        num = 0.0
        den = 0.0
        for di in range(2):
            for dj in range(2):
                ii = i0 + di
                jj = j0 + dj
                wgt = (wy if di == 1 else 1.0 - wy) * (wx if dj == 1 else 1.0 - wx)
                if wgt > 0.0 and 0 <= ii < h and 0 <= jj < w and valid[ii, jj]:
                    num += wgt * src[ii, jj]
                    den += wgt
        if den > 1e-12:
            out[p] = num / den
    return out


def bilinear_sample(src, valid, fy, fx):
    """Sample ``src`` at fractional pixel-center positions (fy, fx).

    Weights of invalid or out-of-range neighbors are renormalized away; a
    position with no valid contributing neighbor yields NaN. Positions within
    ``SNAP_EPS`` of the lattice collapse to exact single-cell reads.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    fy = np.ascontiguousarray(fy, dtype=np.float64)
    fx = np.ascontiguousarray(fx, dtype=np.float64)
    if _BACKEND == "numba":
        return _bilinear_sample_nb(src, valid, fy, fx)
    return _bilinear_sample_np(src, valid, fy, fx)


# ---------------------------------------------------------------------------
# 3x3 quadratic patch fit (z = a x^2 + b y^2 + c xy + d x + e y + f)
# ---------------------------------------------------------------------------

def _patch_fit_np(z, valid, cell_m):
    h, w = z.shape
    g = cell_m
    zf = np.where(valid, z, 0.0)
    nw = zf[:-2, :-2]
    n_ = zf[:-2, 1:-1]
    ne = zf[:-2, 2:]
    w_ = zf[1:-1, :-2]
    c_ = zf[1:-1, 1:-1]
    e_ = zf[1:-1, 2:]
    sw = zf[2:, :-2]
    s_ = zf[2:, 1:-1]
    se = zf[2:, 2:]

    ok = np.ones((h - 2, w - 2), dtype=bool)
    for di in range(3):
        for dj in range(3):
            ok &= valid[di:h - 2 + di, dj:w - 2 + dj]

    a = np.where(ok, (nw + ne + w_ + e_ + sw + se - 2.0 * (n_ + c_ + s_)) / (6.0 * g * g), 0.0)
    b = np.where(ok, (nw + n_ + ne + sw + s_ + se - 2.0 * (w_ + c_ + e_)) / (6.0 * g * g), 0.0)
    c = np.where(ok, (sw - se - nw + ne) / (4.0 * g * g), 0.0)
    d = np.where(ok, ((ne + e_ + se) - (nw + w_ + sw)) / (6.0 * g), 0.0)
    e = np.where(ok, ((nw + n_ + ne) - (sw + s_ + se)) / (6.0 * g), 0.0)
    f = np.where(ok, (5.0 * c_ + 2.0 * (n_ + w_ + e_ + s_) - (nw + ne + sw + se)) / 9.0, 0.0)
    return a, b, c, d, e, f, ok


def _patch_fit_nb_impl(z, valid, cell_m):  # pragma: no cover
    h, w = z.shape
    g = cell_m
    hh, ww = h - 2, w - 2
    a = np.zeros((hh, ww))
    b = np.zeros((hh, ww))
    c = np.zeros((hh, ww))
    d = np.zeros((hh, ww))
    e = np.zeros((hh, ww))
    f = np.zeros((hh, ww))
    ok = np.zeros((hh, ww), dtype=np.bool_)
    for i in range(hh):
        for j in range(ww):
            good = True
            for di in range(3):
                for dj in range(3):
                    if not valid[i + di, j + dj]:
                        good = False
            if not good:
                continue
            nw = z[i, j]
            n_ = z[i, j + 1]
            ne = z[i, j + 2]
            w_ = z[i + 1, j]
            c0 = z[i + 1, j + 1]
            e_ = z[i + 1, j + 2]
            sw = z[i + 2, j]
            s_ = z[i + 2, j + 1]
            se = z[i + 2, j + 2]
            a[i, j] = (nw + ne + w_ + e_ + sw + se - 2.0 * (n_ + c0 + s_)) / (6.0 * g * g)
            b[i, j] = (nw + n_ + ne + sw + s_ + se - 2.0 * (w_ + c0 + e_)) / (6.0 * g * g)
            c[i, j] = (sw - se - nw + ne) / (4.0 * g * g)
            d[i, j] = ((ne + e_ + se) - (nw + w_ + sw)) / (6.0 * g)
            e[i, j] = ((nw + n_ + ne) - (sw + s_ + se)) / (6.0 * g)
            f[i, j] = (5.0 * c0 + 2.0 * (n_ + w_ + e_ + s_) - (nw + ne + sw + se)) / 9.0
            ok[i, j] = True
    return a, b, c, d, e, f, ok


def patch_fit(z, valid, cell_m):
    """Closed-form least-squares quadratic fit on every interior 3x3 window.

    Local axes: x east (column), y north (row 0 is the northernmost). Returns
    the six coefficient planes of shape (H-2, W-2) plus a validity mask that
    is True only where the full window is valid; coefficients are zero
    wherever the mask is False.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    if _BACKEND == "numba":
        return _patch_fit_nb(z, valid, float(cell_m))
    return _patch_fit_np(z, valid, float(cell_m))


if _NB_OK:
    _nesterov_counts_nb = njit(cache=True)(_nesterov_counts_nb_impl)
    _smooth_nodata_nb = njit(cache=True)(_smooth_nodata_nb_impl)
    _bilinear_sample_nb = njit(cache=True)(_bilinear_sample_nb_impl)
    _patch_fit_nb = njit(cache=True)(_patch_fit_nb_impl)
