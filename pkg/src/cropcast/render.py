"""PNG rendering for maps, importance charts, and trajectories.

Figures are rasterized with the Agg canvas and written through a minimal
PNG encoder (8-bit RGB, fixed chunk layout, no timestamps), so rendering
the same data twice produces byte-identical files.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .grid import Raster  # noqa: E402

_DPI = 110
_CLASS_COLORS = ("#bdbdbd", "#1f78b4", "#33a02c", "#ff7f00")
_CLASS_LABELS = ("non-crop / minor", "irrigated (major)",
                 "irrigated (minor)", "rainfed")


def _write_png(rgb: np.ndarray, path: Path) -> Path:
    """Encode an (H, W, 3) uint8 array as a truecolor PNG."""
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[r].tobytes() for r in range(h))

    def chunk(kind: bytes, payload: bytes) -> bytes:
        body = kind + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(
            ">I", zlib.crc32(body))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    blob = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))
    path = Path(path)
    path.write_bytes(blob)
    return path


def _save(fig, path) -> Path:
    fig.set_dpi(_DPI)
    fig.canvas.draw()
    rgba = np.asarray(fig.canvas.buffer_rgba())
    plt.close(fig)
    alpha = rgba[..., 3:4].astype(np.uint16)
    rgb = ((rgba[..., :3].astype(np.uint16) * alpha
            + 255 * (255 - alpha)) // 255).astype(np.uint8)
    return _write_png(rgb, path)


def _extent(spec):
    return (spec.lon_min, spec.lon_max, spec.lat_min, spec.lat_max)


def render_delta(raster: Raster, path, title: str = "") -> Path:
    """Diverging blue-white-red map on a fixed [−1, 1] scale."""
    fig, ax = plt.subplots(figsize=(6.4, 5.2))
    cmap = plt.get_cmap("bwr").copy()
    cmap.set_bad("#d9d9d9")
    im = ax.imshow(np.ma.masked_invalid(raster.values), cmap=cmap,
                   vmin=-1.0, vmax=1.0, extent=_extent(raster.spec),
                   interpolation="nearest", aspect="auto")
    fig.colorbar(im, ax=ax, label="probability change")
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def render_probability(raster: Raster, path, title: str = "") -> Path:
    """Single-class probability map on a fixed [0, 1] scale."""
    fig, ax = plt.subplots(figsize=(6.4, 5.2))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("#d9d9d9")
    im = ax.imshow(np.ma.masked_invalid(raster.values), cmap=cmap,
                   vmin=0.0, vmax=1.0, extent=_extent(raster.spec),
                   interpolation="nearest", aspect="auto")
    fig.colorbar(im, ax=ax, label="probability")
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def render_class_map(mask: Raster, path, title: str = "") -> Path:
    """Categorical class map with one fixed color per class."""
    from matplotlib.colors import BoundaryNorm, ListedColormap
    fig, ax = plt.subplots(figsize=(6.4, 5.2))
    cmap = ListedColormap(_CLASS_COLORS)
    cmap.set_bad("#ffffff")
    norm = BoundaryNorm([-0.5, 0.5, 1.5, 2.5, 3.5], cmap.N)
    im = ax.imshow(np.ma.masked_invalid(mask.values), cmap=cmap, norm=norm,
                   extent=_extent(mask.spec), interpolation="nearest",
                   aspect="auto")
    cbar = fig.colorbar(im, ax=ax, ticks=[0, 1, 2, 3])
    cbar.ax.set_yticklabels(_CLASS_LABELS)
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def render_importance(report, path, top: int = 10, title: str = "") -> Path:
    """Horizontal bars for the highest-importance features."""
    pairs = report.ranked()[:top]
    names = [p[0] for p in pairs][::-1]
    vals = [p[1] for p in pairs][::-1]
    fig, ax = plt.subplots(figsize=(6.4, 0.42 * len(pairs) + 1.4))
    ax.barh(np.arange(len(pairs)), vals, color="#1f78b4")
    ax.set_yticks(np.arange(len(pairs)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("importance (score drop)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def render_trajectory(frame: pd.DataFrame, path, title: str = "") -> Path:
    """Class-count lines over periods, one panel per ssp."""
    ssps = sorted(frame["ssp"].unique())
    fig, axes = plt.subplots(1, len(ssps), figsize=(4.6 * len(ssps), 4.2),
                             sharey=True, squeeze=False)
    for ax, ssp in zip(axes[0], ssps):
        sub = frame[frame["ssp"] == ssp]
        periods = sorted(sub["period"].unique())
        for cls in range(4):
            counts = [int(sub[(sub["period"] == p) & (sub["klass"] == cls)]
                          ["count"].iloc[0]) for p in periods]
            ax.plot(range(len(periods)), counts, marker="o",
                    color=_CLASS_COLORS[cls], label=f"class {cls}")
        ax.set_xticks(range(len(periods)))
        ax.set_xticklabels(periods, rotation=20)
        ax.set_title(ssp)
        ax.set_xlabel("period")
    axes[0][0].set_ylabel("pixels")
    axes[0][-1].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)
