import json

import numpy as np
import pytest
from scipy.spatial import cKDTree

from tubetrack.phantom import LUMEN, WALL, PhantomSpec, PhantomSpecError, generate_phantom, save_phantom
from tubetrack.volume_io import load_volume

CONTACT = dict(kind="random-spline-with-contacts", volume_dims=(80, 80, 80), turns=4, target_contacts=3)


@pytest.fixture(scope="module")
def straight():
    return generate_phantom(PhantomSpec(kind="straight", volume_dims=(100, 40, 40), length_mm=160.0, noise_sigma=0.0))


@pytest.fixture(scope="module")
def coil():
    return generate_phantom(PhantomSpec(seed=3, **CONTACT))


def test_straight_tube_volume(straight):
    s = straight.spec
    r, L, sp = s.tube_radius_mm, s.length_mm, s.spacing_mm
    seg = straight.segmentation.data
    # Rendering uses distance to the centreline segment, so the ends are
    # hemispherical caps: compare the shaft alone to pi r^2 L and the whole
    # mask to the capsule volume.
    x = np.arange(seg.shape[0]) * sp
    x0 = straight.gt_path.points[0, 0]
    shaft = seg[(x >= x0) & (x <= x0 + L)].sum() * sp ** 3
    assert shaft == pytest.approx(np.pi * r * r * L, rel=0.05)
    assert seg.sum() * sp ** 3 == pytest.approx(np.pi * r * r * L + 4 / 3 * np.pi * r ** 3, rel=0.05)


def test_straight_intensities_without_noise(straight):
    img, tissue = straight.volume.data, straight.tissue.data
    assert set(np.unique(img[tissue == LUMEN])) == {200.0}
    assert set(np.unique(img[tissue == WALL])) == {50.0}
    assert set(np.unique(img[tissue == 0])) == {100.0}
    assert straight.contacts_mm == []
    assert np.allclose(straight.start_mm, straight.gt_path.points[0])
    assert np.allclose(straight.end_mm, straight.gt_path.points[-1])
    assert straight.gt_path.length == pytest.approx(160.0)


def test_helix_with_loose_pitch_has_no_contacts():
    spec = PhantomSpec(kind="helix", volume_dims=(64, 64, 80), pitch_mm=45.0, turns=2.0)
    assert spec.pitch_mm > 4 * spec.tube_radius_mm
    assert generate_phantom(spec).contacts_mm == []


def test_random_spline_is_deterministic():
    a = generate_phantom(PhantomSpec(seed=5, **CONTACT))
    b = generate_phantom(PhantomSpec(seed=5, **CONTACT))
    assert a.volume.data.tobytes() == b.volume.data.tobytes()
    assert np.array_equal(a.gt_path.points, b.gt_path.points)
    c = generate_phantom(PhantomSpec(seed=6, **CONTACT))
    assert a.volume.data.tobytes() != c.volume.data.tobytes()


def test_random_spline_has_contacts(coil):
    assert len(coil.contacts_mm) >= 3
    assert len(generate_phantom(PhantomSpec(kind="random-spline-with-contacts", seed=1)).contacts_mm) >= 1
    # Surfaces near each reported contact come within one voxel.
    c = coil.gt_path.points
    r, s = coil.spec.tube_radius_mm, coil.spec.spacing_mm
    tree = cKDTree(c)
    for m in coil.contacts_mm:
        idx = tree.query_ball_point(m, r + s)
        span = np.ptp(idx)
        assert span > 4 * r / coil.spec.sample_step_mm


@pytest.mark.parametrize("which", ["straight", "coil"])
def test_gt_clearance(which, request):
    ph = request.getfixturevalue(which)
    seg = ph.segmentation.data
    s, r = ph.spec.spacing_mm, ph.spec.tube_radius_mm
    idx = np.round(ph.gt_path.points / s).astype(int)
    assert seg[tuple(idx.T)].all()
    d, _ = cKDTree(np.argwhere(~seg) * s).query(ph.gt_path.points)
    assert d.min() >= r - s


@pytest.mark.parametrize("which", ["straight", "coil"])
def test_wall_is_closed_shell(which, request):
    ph = request.getfixturevalue(which)
    t = ph.tissue.data
    # No lumen voxel is 6-adjacent to a background voxel.
    lumen, bg = t == LUMEN, t == 0
    for ax in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[ax], b[ax] = slice(0, -1), slice(1, None)
        assert not np.any(lumen[tuple(a)] & bg[tuple(b)])
        assert not np.any(bg[tuple(a)] & lumen[tuple(b)])
    # 100 random rays from lumen voxels meet wall before background.
    rng = np.random.default_rng(0)
    start = np.argwhere(lumen)[rng.choice(lumen.sum(), 100)]
    dirs = rng.normal(size=(100, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for p0, u in zip(start, dirs):
        seen_wall = False
        for k in np.arange(0, 200, 0.25):
            v = np.round(p0 + k * u).astype(int)
            if np.any(v < 0) or np.any(v >= t.shape):
                break
            if t[tuple(v)] == WALL:
                seen_wall = True
            elif t[tuple(v)] == 0:
                assert seen_wall
                break


def test_contact_walls_fade():
    a = generate_phantom(PhantomSpec(seed=3, noise_sigma=0.0, **CONTACT))
    b = generate_phantom(PhantomSpec(seed=3, noise_sigma=0.0, contact_wall_visibility=0.0, **CONTACT))
    assert np.array_equal(a.tissue.data, b.tissue.data)
    changed = a.volume.data != b.volume.data
    assert changed.any()
    assert np.all(b.volume.data[changed] == 200.0)
    # Every faded voxel lies within r + s of two parts of the centreline that
    # are far apart along the curve.
    sp = b.spec
    reach = sp.tube_radius_mm + sp.spacing_mm
    tree = cKDTree(b.gt_path.points)
    for hits in tree.query_ball_point(np.argwhere(changed) * sp.spacing_mm, reach):
        assert np.ptp(hits) > 4 * sp.tube_radius_mm / sp.sample_step_mm


def test_clearance_violation_raises():
    with pytest.raises(PhantomSpecError):
        generate_phantom(PhantomSpec(kind="straight", volume_dims=(60, 40, 40), length_mm=160.0))


def test_self_overlap_raises():
    with pytest.raises(PhantomSpecError, match="overlaps"):
        generate_phantom(PhantomSpec(kind="helix", volume_dims=(64, 64, 64), pitch_mm=15.0))


def test_tight_bend_raises():
    with pytest.raises(PhantomSpecError, match="bend"):
        generate_phantom(PhantomSpec(kind="helix", volume_dims=(64, 64, 80), helix_radius_mm=12.0, pitch_mm=45.0))


def test_contact_count_needs_turns():
    with pytest.raises(PhantomSpecError, match="turns"):
        generate_phantom(PhantomSpec(kind="random-spline-with-contacts", turns=3, target_contacts=3))


@pytest.mark.parametrize("bad", [
    dict(tube_radius_mm=3.0, wall_thickness_mm=3.0),
    dict(wall_thickness_mm=0.0),
    dict(kind="torus"),
    dict(contact_wall_visibility=1.5),
])
def test_spec_validation(bad):
    with pytest.raises(PhantomSpecError):
        generate_phantom(PhantomSpec(**bad))


def test_from_dict():
    spec = PhantomSpec.from_dict({"kind": "helix", "volume_dims": [10, 20, 30]})
    assert spec.volume_dims == (10, 20, 30)
    with pytest.raises(PhantomSpecError):
        PhantomSpec.from_dict({"colour": "red"})


def test_save_phantom(tmp_path, coil):
    m = save_phantom(coil, tmp_path)
    disk = json.loads((tmp_path / "manifest.json").read_text())
    assert disk == json.loads(json.dumps(m))
    assert len(disk["contacts_mm"]) == len(coil.contacts_mm)
    v = load_volume(tmp_path / "volume.nii.gz")
    assert np.array_equal(v.data, coil.volume.data) and v.spacing == coil.volume.spacing
    seg = load_volume(tmp_path / "segmentation.nii.gz")
    assert np.array_equal(seg.data > 0, coil.segmentation.data)
    assert (tmp_path / "gt_path.csv").read_text().startswith("x_mm,y_mm,z_mm")
