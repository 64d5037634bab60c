"""Raster container, binary round-trips, and regridding behavior."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropcast.errors import DataError
from cropcast.grid import (GridSpec, Raster, class_onehot, rasters_equal,
                           read_raster, regrid, regrid_class,
                           scatter_to_raster, validate_class_mask,
                           write_raster)


def small_spec(w=2, h=2, cell=1.0):
    return GridSpec(width=w, height=h, lon_min=0.0, lat_max=h * cell, cell=cell)


# ---------------------------------------------------------------------------
# GridSpec geometry
# ---------------------------------------------------------------------------

def test_pixel_centers():
    spec = GridSpec(width=4, height=3, lon_min=10.0, lat_max=50.0, cell=0.5)
    assert spec.pixel_center(0, 0) == (10.25, 49.75)
    assert spec.pixel_center(2, 3) == (11.75, 48.75)
    assert spec.lon_max == 12.0
    assert spec.lat_min == 48.5
    assert np.allclose(spec.lat_centers(), [49.75, 49.25, 48.75])


def test_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(width=0, height=2, lon_min=0, lat_max=1, cell=1.0)
    with pytest.raises(ValueError):
        GridSpec(width=2, height=2, lon_min=0, lat_max=1, cell=-1.0)
    with pytest.raises(ValueError):
        GridSpec(width=2, height=2, lon_min=math.nan, lat_max=1, cell=1.0)


def test_bbox_mask_selects_centers():
    spec = GridSpec(width=4, height=4, lon_min=0.0, lat_max=4.0, cell=1.0)
    m = spec.bbox_mask(lat_top=3.0, lon_left=1.0, lat_bottom=1.0, lon_right=3.0)
    # centers at 0.5..3.5; rows with lat 2.5, 1.5 and cols with lon 1.5, 2.5
    assert m.sum() == 4
    assert m[1:3, 1:3].all()


# ---------------------------------------------------------------------------
# Binary raster format
# ---------------------------------------------------------------------------

def test_read_two_by_two_blob(tmp_path):
    meta = {"width": 2, "height": 2, "lon_min": 0.0, "lat_max": 2.0,
            "cell": 1.0, "dtype": "f64", "nodata": "nan"}
    (tmp_path / "t.json").write_text(json.dumps(meta))
    np.array([1.0, 2.0, 3.0, 4.0]).astype("<f8").tofile(tmp_path / "t.f64")
    r = read_raster(tmp_path / "t.json")
    assert np.array_equal(r.values, [[1.0, 2.0], [3.0, 4.0]])


def test_blob_length_mismatch_raises(tmp_path):
    meta = {"width": 2, "height": 2, "lon_min": 0.0, "lat_max": 2.0,
            "cell": 1.0, "dtype": "f64", "nodata": "nan"}
    (tmp_path / "t.json").write_text(json.dumps(meta))
    np.array([1.0, 2.0, 3.0]).astype("<f8").tofile(tmp_path / "t.f64")
    with pytest.raises(DataError):
        read_raster(tmp_path / "t.json")


def test_missing_manifest_raises(tmp_path):
    with pytest.raises(DataError):
        read_raster(tmp_path / "absent.json")


@settings(deadline=None, max_examples=25)
@given(seed=st.integers(0, 2**31 - 1))
def test_roundtrip_bit_identical(tmp_path_factory, seed):
    tmp = tmp_path_factory.mktemp("rt")
    r = np.random.default_rng(seed)
    vals = r.normal(0, 100, (16, 16))
    vals[r.random((16, 16)) < 0.1] = np.nan
    spec = GridSpec(width=16, height=16, lon_min=-4.0, lat_max=8.0, cell=0.25)
    src = Raster(spec, vals)
    write_raster(src, tmp / f"r{seed}")
    back = read_raster(tmp / f"r{seed}")
    assert rasters_equal(src, back)
    assert math.isnan(back.nodata)


def test_f32_storage_quantizes(tmp_path):
    spec = small_spec()
    src = Raster(spec, np.array([[1.1, 2.2], [3.3, 4.4]]))
    write_raster(src, tmp_path / "q", dtype="f32")
    back = read_raster(tmp_path / "q")
    assert np.array_equal(back.values, src.values.astype(np.float32).astype(np.float64))


def test_finite_nodata_sentinel(tmp_path):
    spec = small_spec()
    src = Raster(spec, np.array([[0.0, 1.0], [2.0, -9999.0]]), nodata=-9999.0)
    write_raster(src, tmp_path / "s")
    back = read_raster(tmp_path / "s")
    assert back.nodata == -9999.0
    assert back.valid.sum() == 3
    assert not back.valid[1, 1]


# ---------------------------------------------------------------------------
# Regridding
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["nearest", "bilinear"])
def test_identity_regrid_exact(method, rng, backend):
    spec = GridSpec(width=9, height=7, lon_min=12.3, lat_max=47.1, cell=0.37)
    vals = rng.normal(0, 5, spec.shape)
    vals[2, 3] = np.nan
    src = Raster(spec, vals)
    out = regrid(src, spec, method)
    assert rasters_equal(src, out)


def test_bilinear_center_average(backend):
    src = Raster(small_spec(), np.array([[0.0, 0.0], [4.0, 4.0]]))
    target = GridSpec(width=1, height=1, lon_min=0.0, lat_max=2.0, cell=2.0)
    out = regrid(src, target, "bilinear")
    assert abs(out.values[0, 0] - 2.0) < 1e-12


def test_nearest_propagates_nodata(backend):
    src = Raster(small_spec(), np.array([[1.0, np.nan], [3.0, 4.0]]))
    target = GridSpec(width=1, height=1, lon_min=1.0, lat_max=2.0, cell=1.0)
    out = regrid(src, target, "nearest")
    assert math.isnan(out.values[0, 0])


def test_outside_extent_is_nodata(backend):
    src = Raster(small_spec(), np.ones((2, 2)))
    target = GridSpec(width=4, height=2, lon_min=-2.0, lat_max=2.0, cell=1.0)
    out = regrid(src, target, "bilinear")
    assert np.isnan(out.values[:, :2]).all()
    assert np.isfinite(out.values[:, 2:]).all()


def test_empty_overlap_raises(backend):
    src = Raster(small_spec(), np.ones((2, 2)))
    target = GridSpec(width=2, height=2, lon_min=100.0, lat_max=2.0, cell=1.0)
    with pytest.raises(ValueError):
        regrid(src, target, "bilinear")


def test_unknown_method_raises():
    src = Raster(small_spec(), np.ones((2, 2)))
    with pytest.raises(ValueError):
        regrid(src, src.spec, "cubic")


def test_bilinear_downscale_is_convex(backend, rng):
    spec = GridSpec(width=8, height=8, lon_min=0.0, lat_max=8.0, cell=1.0)
    src = Raster(spec, rng.normal(0, 10, (8, 8)))
    target = GridSpec(width=16, height=16, lon_min=0.0, lat_max=8.0, cell=0.5)
    out = regrid(src, target, "bilinear")
    inner = out.values[1:-1, 1:-1]
    assert np.isfinite(inner).all()
    assert inner.min() >= src.values.min() - 1e-9
    assert inner.max() <= src.values.max() + 1e-9


# ---------------------------------------------------------------------------
# Class masks
# ---------------------------------------------------------------------------

def test_class_mask_validation():
    spec = small_spec()
    good = Raster(spec, np.array([[0.0, 1.0], [2.0, 3.0]]))
    validate_class_mask(good)
    bad = Raster(spec, np.array([[0.0, 5.0], [2.0, 3.0]]))
    with pytest.raises(DataError):
        validate_class_mask(bad)
    frac = Raster(spec, np.array([[0.0, 1.5], [2.0, 3.0]]))
    with pytest.raises(DataError):
        validate_class_mask(frac)


def test_regrid_class_never_blends(backend):
    spec = GridSpec(width=4, height=4, lon_min=0.0, lat_max=4.0, cell=1.0)
    vals = np.array([[0, 0, 3, 3]] * 4, dtype=float)
    mask = Raster(spec, vals)
    target = GridSpec(width=8, height=8, lon_min=0.0, lat_max=4.0, cell=0.5)
    out = regrid_class(mask, target)
    got = set(np.unique(out.values[np.isfinite(out.values)]))
    assert got <= {0.0, 3.0}  # never 1.5 at the boundary


def test_class_onehot():
    spec = small_spec()
    mask = Raster(spec, np.array([[0.0, 1.0], [np.nan, 3.0]]))
    hot = class_onehot(mask, 1)
    assert hot.values[0, 1] == 1.0
    assert hot.values[0, 0] == 0.0
    assert math.isnan(hot.values[1, 0])


def test_scatter_to_raster():
    spec = small_spec()
    pix = np.array([[0, 1], [1, 0]])
    r = scatter_to_raster(np.array([7.0, 9.0]), pix, spec)
    assert r.values[0, 1] == 7.0
    assert r.values[1, 0] == 9.0
    assert math.isnan(r.values[0, 0])
