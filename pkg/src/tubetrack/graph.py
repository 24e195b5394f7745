"""Region adjacency graph over supervoxels and its edge costs.

Edge cost = wall term + lambda * cylinder term. The wall term is the mean
wall response over the voxels lining the shared face; the cylinder term
penalises edges running across the axis of a locally fitted cylinder.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .supervoxel import SupervoxelLabeling
from .volume_io import Volume

DEFAULT_CYL_COST = 0.5


@dataclass(frozen=True)
class RegionAdjacencyGraph:
    """Undirected simple graph on supervoxel ids ``1..n_nodes``.

    ``edges`` is an ``(E, 2)`` array of ``(i, j)`` with ``i < j`` sorted
    lexicographically. Boundary voxels of edge ``e`` are
    ``boundary_voxels[boundary_ptr[e]:boundary_ptr[e + 1]]`` (flat indices into
    the label grid, both sides of the face, deduplicated).
    """

    n_nodes: int
    centroids_mm: np.ndarray
    edges: np.ndarray
    boundary_ptr: np.ndarray
    boundary_voxels: np.ndarray
    cost_wall: np.ndarray
    cost_cyl: np.ndarray
    lam: float = 1.0

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def cost_total(self) -> np.ndarray:
        return self.cost_wall + self.lam * self.cost_cyl

    def with_lambda(self, lam: float) -> "RegionAdjacencyGraph":
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        return replace(self, lam=float(lam))

    def boundary_of(self, e: int) -> np.ndarray:
        return self.boundary_voxels[self.boundary_ptr[e]:self.boundary_ptr[e + 1]]

    def edge_index(self, i: int, j: int) -> int:
        a, b = (i, j) if i < j else (j, i)
        k = np.searchsorted(self._keys, a * (self.n_nodes + 1) + b)
        if k < len(self._keys) and self._keys[k] == a * (self.n_nodes + 1) + b:
            return int(k)
        raise KeyError((i, j))

    @property
    def _keys(self) -> np.ndarray:
        return self.edges[:, 0].astype(np.int64) * (self.n_nodes + 1) + self.edges[:, 1]

    def adjacency(self, costs: np.ndarray | None = None) -> list[list[tuple[int, float]]]:
        """Adjacency lists indexed by node id, neighbours in ascending id order."""
        costs = self.cost_total if costs is None else costs
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes + 1)]
        for (i, j), c in zip(self.edges.tolist(), np.asarray(costs, float).tolist()):
            adj[i].append((j, c))
            adj[j].append((i, c))
        for lst in adj:
            lst.sort()
        return adj

    def neighbors(self, i: int) -> np.ndarray:
        m = (self.edges[:, 0] == i) | (self.edges[:, 1] == i)
        e = self.edges[m]
        return np.sort(np.where(e[:, 0] == i, e[:, 1], e[:, 0]))


def build_rag(labeling: SupervoxelLabeling, lam: float = 1.0) -> RegionAdjacencyGraph:
    """One node per supervoxel; an edge for every face-adjacent pair of labels."""
    lab = np.asarray(labeling.labels.data)
    flat_idx = np.arange(lab.size).reshape(lab.shape)
    n = labeling.count
    keys, vox = [], []
    for a in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        la, lb = lab[tuple(lo)], lab[tuple(hi)]
        m = (la != lb) & (la > 0) & (lb > 0)
        if not m.any():
            continue
        a_lab, b_lab = la[m].astype(np.int64), lb[m].astype(np.int64)
        key = np.minimum(a_lab, b_lab) * (n + 1) + np.maximum(a_lab, b_lab)
        keys += [key, key]
        vox += [flat_idx[tuple(lo)][m], flat_idx[tuple(hi)][m]]
    if keys:
        keys = np.concatenate(keys)
        vox = np.concatenate(vox).astype(np.int64)
        pair = np.unique(np.stack([keys, vox], axis=1), axis=0)
        ekeys, ptr_start = np.unique(pair[:, 0], return_index=True)
        ptr = np.append(ptr_start, len(pair)).astype(np.int64)
        edges = np.stack([ekeys // (n + 1), ekeys % (n + 1)], axis=1).astype(np.int64)
        bvox = pair[:, 1]
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
        ptr = np.zeros(1, dtype=np.int64)
        bvox = np.zeros(0, dtype=np.int64)
    ne = len(edges)
    return RegionAdjacencyGraph(
        n_nodes=n,
        centroids_mm=np.asarray(labeling.centroids_mm, float),
        edges=edges,
        boundary_ptr=ptr,
        boundary_voxels=bvox,
        cost_wall=np.zeros(ne),
        cost_cyl=np.full(ne, DEFAULT_CYL_COST),
        lam=float(lam),
    )


def compute_wall_costs(g: RegionAdjacencyGraph, walls: Volume) -> RegionAdjacencyGraph:
    """Mean wall response over each edge's boundary voxels."""
    w = np.asarray(walls.data, dtype=np.float64).ravel()
    if g.n_edges == 0:
        return g
    if g.boundary_voxels.size and g.boundary_voxels.max() >= w.size:
        raise ValueError("wall map grid does not match the labeling grid")
    counts = np.diff(g.boundary_ptr)
    seg = np.repeat(np.arange(g.n_edges), counts)
    sums = np.bincount(seg, weights=w[g.boundary_voxels], minlength=g.n_edges)
    return replace(g, cost_wall=np.clip(sums / counts, 0.0, 1.0))


def _inside_cylinders(points: np.ndarray, centers, axes, radii, heights) -> np.ndarray:
    """Boolean ``(n_points, n_cyl)`` point-in-finite-cylinder table."""
    d = points[:, None, :] - centers[None, :, :]
    axial = np.einsum("pck,ck->pc", d, axes)
    radial2 = np.einsum("pck,pck->pc", d, d) - axial**2
    return (np.abs(axial) <= heights / 2) & (radial2 <= radii**2 + 1e-12)


def cylinder_edge_cost(p_i, p_j, axis) -> float:
    """``1 - |cos|`` of the angle between the centroid step and the axis."""
    v = np.asarray(p_j, float) - np.asarray(p_i, float)
    a = np.asarray(axis, float)
    nv, na = np.linalg.norm(v), np.linalg.norm(a)
    if nv == 0 or na == 0:
        return DEFAULT_CYL_COST
    return float(1.0 - abs(np.dot(v, a)) / (nv * na))


def compute_cylinder_costs(g: RegionAdjacencyGraph, cylinders) -> RegionAdjacencyGraph:
    """Cylinder alignment cost for edges whose two centroids lie inside a cylinder.

    Invalid cylinders are ignored. When an edge sits inside several cylinders,
    the one whose centre is nearest the edge midpoint is used; edges inside
    none keep the neutral 0.5.
    """
    cyls = [c for c in cylinders if c.valid]
    cost = np.full(g.n_edges, DEFAULT_CYL_COST)
    if not cyls or g.n_edges == 0:
        return replace(g, cost_cyl=cost)
    centers = np.array([c.center_mm for c in cyls], float)
    axes = np.array([c.axis for c in cyls], float)
    if not np.allclose(np.linalg.norm(axes, axis=1), 1.0, atol=1e-6):
        raise ValueError("cylinder axes must be unit vectors")
    radii = np.array([c.radius_mm for c in cyls], float)
    heights = np.array([c.height_mm for c in cyls], float)

    p = g.centroids_mm
    pi, pj = p[g.edges[:, 0]], p[g.edges[:, 1]]
    inside = _inside_cylinders(pi, centers, axes, radii, heights) & _inside_cylinders(
        pj, centers, axes, radii, heights
    )
    hit = inside.any(axis=1)
    if hit.any():
        mid = 0.5 * (pi[hit] + pj[hit])
        dc = np.linalg.norm(mid[:, None, :] - centers[None], axis=2)
        dc[~inside[hit]] = np.inf
        best = np.argmin(dc, axis=1)
        v = pj[hit] - pi[hit]
        nv = np.linalg.norm(v, axis=1)
        a = axes[best]
        c = np.full(hit.sum(), DEFAULT_CYL_COST)
        ok = nv > 0
        c[ok] = 1.0 - np.abs(np.einsum("ek,ek->e", v[ok], a[ok])) / nv[ok]
        cost[hit] = np.clip(c, 0.0, 1.0)
    return replace(g, cost_cyl=cost)


def export_edge_list(g: RegionAdjacencyGraph, path) -> None:
    """Text edge list: ``node_i node_j cost_wall cost_cyl cost_total``."""
    lines = ["# node_i node_j cost_wall cost_cyl cost_total"]
    for (i, j), cw, cc, ct in zip(g.edges.tolist(), g.cost_wall, g.cost_cyl, g.cost_total):
        lines.append(f"{i} {j} {cw:.10g} {cc:.10g} {ct:.10g}")
    Path(path).write_text("\n".join(lines) + "\n")
