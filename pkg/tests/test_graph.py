import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubetrack.cylinders import Cylinder
from tubetrack.filters import meijering_valley
from tubetrack.graph import (
    DEFAULT_CYL_COST,
    build_rag,
    compute_cylinder_costs,
    compute_wall_costs,
    cylinder_edge_cost,
    export_edge_list,
)
from tubetrack.supervoxel import labeling_from_array, slic_supervoxels
from tubetrack.volume_io import Volume


def _labeling(lab, spacing=1.0):
    lab = np.asarray(lab, np.int32)
    return labeling_from_array(lab, Volume(np.zeros(lab.shape), (spacing,) * 3))


def _cyl(center, axis, r=5.0, h=10.0):
    a = np.asarray(axis, float)
    return Cylinder(np.asarray(center, float), a / np.linalg.norm(a), r, h, 100, True)


def _two_node_graph(p_i, p_j):
    g = build_rag(_labeling(np.array([[[1, 2]]])))
    return g.__class__(**{**g.__dict__, "centroids_mm": np.array([[np.nan] * 3, p_i, p_j], float)})


def test_cube_split_in_two_has_one_edge():
    lab = np.ones((4, 4, 4), int)
    lab[2:] = 2
    g = build_rag(_labeling(lab))
    assert g.n_edges == 1
    assert g.edges.tolist() == [[1, 2]]
    # Both sides of the 4x4 face.
    assert len(g.boundary_of(0)) == 32


def test_2x2x2_blocks_have_12_edges():
    lab = np.zeros((4, 4, 4), int)
    k = 1
    for i in range(2):
        for j in range(2):
            for l in range(2):
                lab[2 * i:2 * i + 2, 2 * j:2 * j + 2, 2 * l:2 * l + 2] = k
                k += 1
    g = build_rag(_labeling(lab))
    assert g.n_edges == 12


def _brute_edges(lab):
    out = set()
    nx, ny, nz = lab.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                a = lab[x, y, z]
                for dx, dy, dz in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
                    u, v, w = x + dx, y + dy, z + dz
                    if u < nx and v < ny and w < nz:
                        b = lab[u, v, w]
                        if a and b and a != b:
                            out.add((min(a, b), max(a, b)))
    return out


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 40))
def test_random_labeling_edges_match_bruteforce(seed, n_labels):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, n_labels + 1, (12, 12, 12))
    present = np.unique(lab[lab > 0])
    lut = np.zeros(n_labels + 1, int)
    lut[present] = np.arange(1, len(present) + 1)
    lab = lut[lab]
    g = build_rag(_labeling(lab))
    assert set(map(tuple, g.edges.tolist())) == _brute_edges(lab)
    assert np.all(g.edges[:, 0] < g.edges[:, 1])
    assert len(np.unique(g.edges, axis=0)) == g.n_edges


def test_wall_cost_trivial_cases():
    lab = np.ones((4, 4, 4), int)
    lab[2:] = 2
    L = _labeling(lab)
    g = build_rag(L)
    zero = compute_wall_costs(g, L.labels.with_data(np.zeros((4, 4, 4))))
    assert np.all(zero.cost_wall == 0)
    w = np.zeros((4, 4, 4))
    w[1:3] = 1.0
    assert compute_wall_costs(g, L.labels.with_data(w)).cost_wall[0] == 1.0
    # Only one side lit: mean over the deduplicated two-sided boundary is 0.5.
    w = np.zeros((4, 4, 4))
    w[1] = 1.0
    assert compute_wall_costs(g, L.labels.with_data(w)).cost_wall[0] == 0.5


def test_plane_phantom_wall_cost_ratio():
    rng = np.random.default_rng(4)
    img = np.full((24, 24, 24), 200.0)
    img[11:13] = 50.0
    img += rng.normal(0, 5, img.shape)
    w = meijering_valley(Volume(img, (2.0,) * 3), (2.0, 3.0, 4.0))
    L = slic_supervoxels(w, w.with_data(np.ones(w.dims, bool)))
    g = compute_wall_costs(build_rag(L), w)
    cx = g.centroids_mm[:, 0] / 2.0
    i, j = g.edges[:, 0], g.edges[:, 1]
    left_i, left_j = cx[i] < 11, cx[j] < 11
    right_i, right_j = cx[i] > 12, cx[j] > 12
    crossing = (left_i & ~left_j) | (left_j & ~left_i)
    crossing |= (right_i & ~right_j) | (right_j & ~right_i)
    lumen = (left_i & left_j & (cx[i] < 8) & (cx[j] < 8)) | (right_i & right_j & (cx[i] > 15) & (cx[j] > 15))
    assert crossing.any() and lumen.any()
    assert g.cost_wall[crossing].mean() >= 5 * g.cost_wall[lumen].mean()


def test_cylinder_cost_analytic():
    a = [0, 0, 1.0]
    assert cylinder_edge_cost([0, 0, 0], [0, 0, 3], a) == 0.0
    assert cylinder_edge_cost([0, 0, 0], [2, 0, 0], a) == 1.0
    assert abs(cylinder_edge_cost([0, 0, 0], [1, 0, 1], a) - (1 - np.sqrt(2) / 2)) < 1e-12
    assert cylinder_edge_cost([1, 1, 1], [1, 1, 1], a) == DEFAULT_CYL_COST


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=9, max_size=9))
def test_cylinder_cost_sign_and_swap_invariance(v):
    p, q, a = np.array(v[:3]), np.array(v[3:6]), np.array(v[6:])
    if np.linalg.norm(a) < 1e-3:
        return
    c = cylinder_edge_cost(p, q, a)
    assert 0.0 <= c <= 1.0 + 1e-12
    assert c == cylinder_edge_cost(p, q, -a)
    assert abs(c - cylinder_edge_cost(q, p, a)) < 1e-12


def test_compute_cylinder_costs_inside_outside():
    g = _two_node_graph([0, 0, -2.0], [0, 0, 2.0])
    assert compute_cylinder_costs(g, []).cost_cyl[0] == 0.5
    inside = compute_cylinder_costs(g, [_cyl([0, 0, 0], [0, 0, 1])])
    assert inside.cost_cyl[0] == 0.0
    flipped = compute_cylinder_costs(g, [_cyl([0, 0, 0], [0, 0, -1])])
    assert flipped.cost_cyl[0] == 0.0
    # One centroid outside (axially beyond h/2): keeps the default.
    short = compute_cylinder_costs(g, [_cyl([0, 0, 0], [0, 0, 1], h=3.0)])
    assert short.cost_cyl[0] == 0.5
    # Invalid cylinders are ignored.
    bad = Cylinder(np.zeros(3), np.array([0, 0, 1.0]), 5.0, 10.0, 3, False)
    assert compute_cylinder_costs(g, [bad]).cost_cyl[0] == 0.5


def test_compute_cylinder_costs_perpendicular_and_45():
    g = _two_node_graph([-1.0, 0, 0], [1.0, 0, 0])
    assert compute_cylinder_costs(g, [_cyl([0, 0, 0], [0, 0, 1])]).cost_cyl[0] == 1.0
    g = _two_node_graph([0, 0, 0], [1.0, 0, 1.0])
    c = compute_cylinder_costs(g, [_cyl([0, 0, 0], [0, 0, 1])]).cost_cyl[0]
    assert abs(c - (1 - np.sqrt(2) / 2)) < 1e-12


def test_compute_cylinder_costs_nearest_center_wins():
    g = _two_node_graph([0, 0, 0], [0, 0, 1.0])
    near = _cyl([0, 0, 0.5], [0, 0, 1])
    far = _cyl([0, 0, 3.0], [1, 0, 0], r=10.0, h=10.0)
    assert compute_cylinder_costs(g, [far, near]).cost_cyl[0] == 0.0
    assert compute_cylinder_costs(g, [near, far]).cost_cyl[0] == 0.0


def test_non_unit_axis_rejected():
    g = _two_node_graph([0, 0, 0], [0, 0, 1.0])
    c = Cylinder(np.zeros(3), np.array([0, 0, 2.0]), 5.0, 10.0, 100, True)
    with pytest.raises(ValueError):
        compute_cylinder_costs(g, [c])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 5), st.floats(0, 5))
def test_total_cost_monotone_in_lambda(seed, l1, l2):
    rng = np.random.default_rng(seed)
    lab = rng.integers(1, 6, (5, 5, 5))
    present = np.unique(lab)
    lut = np.zeros(6, int)
    lut[present] = np.arange(1, len(present) + 1)
    L = _labeling(lut[lab])
    g = compute_wall_costs(build_rag(L), L.labels.with_data(rng.random((5, 5, 5))))
    g = g.__class__(**{**g.__dict__, "cost_cyl": rng.random(g.n_edges)})
    lo, hi = sorted((l1, l2))
    assert np.all(g.with_lambda(hi).cost_total >= g.with_lambda(lo).cost_total)
    assert np.array_equal(g.with_lambda(0).cost_total, g.cost_wall)
    assert np.allclose(g.with_lambda(hi).cost_total, g.cost_wall + hi * g.cost_cyl)


def test_negative_lambda_rejected():
    g = build_rag(_labeling(np.array([[[1, 2]]])))
    with pytest.raises(ValueError):
        g.with_lambda(-0.1)


def test_edge_list_export(tmp_path):
    lab = np.ones((2, 2, 2), int)
    lab[1] = 2
    g = build_rag(_labeling(lab))
    export_edge_list(g, tmp_path / "e.txt")
    lines = (tmp_path / "e.txt").read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1].split() == ["1", "2", "0", "0.5", "0.5"]
