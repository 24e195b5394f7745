import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubetrack.volume_io import (
    Volume,
    VolumeIOError,
    crop,
    load_volume,
    resample_isotropic,
    save_volume,
)


def test_raw_zeros_loads_with_dims(tmp_path):
    p = tmp_path / "zeros.raw"
    np.zeros(64, dtype="<f4").tofile(p)
    (tmp_path / "zeros.raw.json").write_text(json.dumps({"dims": [4, 4, 4], "spacing_mm": 2.0, "origin_mm": [0, 0, 0]}))
    v = load_volume(p)
    assert v.dims == (4, 4, 4)
    assert v.spacing_mm == 2.0
    assert not v.data.any()


def test_raw_is_x_fastest(tmp_path):
    p = tmp_path / "ramp.raw"
    np.arange(24, dtype="<f4").tofile(p)
    (tmp_path / "ramp.raw.json").write_text(json.dumps({"dims": [2, 3, 4], "spacing_mm": 1.0, "origin_mm": [0, 0, 0]}))
    v = load_volume(p)
    assert v.data[1, 0, 0] == 1
    assert v.data[0, 1, 0] == 2
    assert v.data[0, 0, 1] == 6


def test_raw_short_file_raises(tmp_path):
    p = tmp_path / "short.raw"
    np.zeros(63, dtype="<f4").tofile(p)
    (tmp_path / "short.raw.json").write_text(json.dumps({"dims": [4, 4, 4], "spacing_mm": 2.0, "origin_mm": [0, 0, 0]}))
    with pytest.raises(VolumeIOError):
        load_volume(p)


def test_raw_missing_sidecar_raises(tmp_path):
    p = tmp_path / "nosidecar.raw"
    np.zeros(8, dtype="<f4").tofile(p)
    with pytest.raises(VolumeIOError):
        load_volume(p)


def test_nifti_dims_echo(tmp_path):
    v = Volume(np.zeros((10, 12, 8), np.float32), (2.0, 2.0, 2.0))
    save_volume(v, tmp_path / "a.nii.gz")
    assert load_volume(tmp_path / "a.nii.gz").dims == (10, 12, 8)


@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.float32])
@pytest.mark.parametrize("ext", [".nii", ".nii.gz"])
def test_nifti_round_trip_bit_exact(tmp_path, dtype, ext):
    rng = np.random.default_rng(3)
    data = (rng.uniform(0, 100, (5, 6, 7))).astype(dtype)
    v = Volume(data, (1.5, 1.5, 1.5), (3.0, -2.0, 10.0))
    save_volume(v, tmp_path / f"v{ext}")
    w = load_volume(tmp_path / f"v{ext}")
    assert w.data.dtype == dtype
    assert w.data.tobytes() == data.tobytes()
    assert w.spacing == v.spacing
    assert w.origin_mm == v.origin_mm


def test_nifti_scaling_applied(tmp_path):
    import nibabel as nib

    img = nib.Nifti1Image(np.full((3, 3, 3), 10, np.int16), np.eye(4))
    img.header.set_slope_inter(2.0, -5.0)
    nib.save(img, str(tmp_path / "s.nii"))
    v = load_volume(tmp_path / "s.nii")
    assert np.all(v.data == 15.0)


def test_nifti_unsupported_dtype(tmp_path):
    import nibabel as nib

    nib.save(nib.Nifti1Image(np.zeros((3, 3, 3), np.float64), np.eye(4)), str(tmp_path / "d.nii"))
    with pytest.raises(VolumeIOError):
        load_volume(tmp_path / "d.nii")


def test_unreadable_nifti(tmp_path):
    (tmp_path / "junk.nii").write_bytes(b"not a nifti file")
    with pytest.raises(VolumeIOError):
        load_volume(tmp_path / "junk.nii")


def test_anisotropic_spacing_kept_until_resample(tmp_path):
    v = Volume(np.ones((4, 4, 4), np.float32), (1.0, 1.0, 3.0))
    save_volume(v, tmp_path / "an.nii.gz")
    w = load_volume(tmp_path / "an.nii.gz")
    assert w.spacing == (1.0, 1.0, 3.0)
    assert not w.is_isotropic
    assert resample_isotropic(w, 2.0).dims == (2, 2, 6)


@settings(max_examples=25, deadline=None)
@given(
    st.tuples(*[st.integers(1, 6)] * 3),
    st.floats(0.25, 4.0),
    st.integers(0, 2**31 - 1),
)
def test_raw_round_trip_bit_exact(tmp_path_factory, dims, spacing, seed):
    d = tmp_path_factory.mktemp("raw")
    data = np.random.default_rng(seed).normal(size=dims).astype(np.float32)
    v = Volume(data, (spacing,) * 3, (1.0, 2.0, -3.5))
    save_volume(v, d / "v.raw")
    w = load_volume(d / "v.raw")
    assert w.data.tobytes() == data.tobytes()
    assert w.spacing == v.spacing and w.origin_mm == v.origin_mm


def test_resample_constant():
    v = Volume(np.full((7, 5, 9), 7.0, np.float32), (1.3, 0.7, 2.1))
    r = resample_isotropic(v, 2.0)
    assert np.all(r.data == 7.0)


def test_resample_identity():
    data = np.random.default_rng(0).normal(size=(6, 7, 8)).astype(np.float32)
    v = Volume(data, (2.0, 2.0, 2.0))
    r = resample_isotropic(v, 2.0)
    assert r.data.tobytes() == data.tobytes()
    assert r.dims == v.dims


def test_resample_ramp_1mm_to_2mm():
    nx = 40
    ramp = np.broadcast_to(np.arange(nx, dtype=np.float64)[:, None, None] * 0.5, (nx, 6, 6)).copy()
    v = Volume(ramp, (1.0, 1.0, 1.0))
    r = resample_isotropic(v, 2.0)
    assert r.dims == (20, 3, 3)
    # Output voxel k sits at x = 2k mm, where the analytic ramp is 0.5 * 2k.
    expect = 0.5 * 2.0 * np.arange(20)
    assert np.max(np.abs(r.data[:, 1, 1] - expect)) < 1e-6
    assert np.allclose(np.diff(r.data[:, 0, 0]), 1.0)


@settings(max_examples=30, deadline=None)
@given(
    st.tuples(*[st.integers(2, 8)] * 3),
    st.tuples(*[st.floats(0.5, 3.0)] * 3),
    st.floats(0.5, 3.0),
    st.integers(0, 2**31 - 1),
)
def test_resample_stays_in_input_range(dims, spacing, target, seed):
    data = np.random.default_rng(seed).uniform(-5, 5, dims)
    v = Volume(data, spacing)
    r = resample_isotropic(v, target)
    assert r.data.min() >= data.min() and r.data.max() <= data.max()
    expect = np.maximum(1, np.round(np.asarray(dims) * np.asarray(spacing) / target)).astype(int)
    assert r.dims == tuple(expect)


def test_resample_bad_target():
    with pytest.raises(ValueError):
        resample_isotropic(Volume(np.zeros((2, 2, 2))), 0.0)


def test_crop_moves_origin():
    v = Volume(np.arange(60.0).reshape(3, 4, 5), (2.0, 2.0, 2.0), (10.0, 0.0, 0.0))
    c = crop(v, z=(1, 4))
    assert c.dims == (3, 4, 3)
    assert c.origin_mm == (10.0, 0.0, 2.0)
    assert np.array_equal(c.data, v.data[:, :, 1:4])
    # Same physical point maps to the same value.
    assert c.data[1, 2, 0] == v.data[1, 2, 1]
    with pytest.raises(ValueError):
        crop(v, z=(4, 4))


def test_volume_validation():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))
    v = Volume(np.zeros((2, 2, 2)), (1.0, 1.0, 2.0))
    with pytest.raises(ValueError):
        v.spacing_mm
