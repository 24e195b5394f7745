"""Optimal start-to-end path through must-pass nodes.

A dense "simplified graph" is built over ``{start, end} + must-pass`` nodes.
Pairs closer than ``delta_mm`` cost their Dijkstra path cost on the RAG,
normalised by the largest such cost; farther pairs cost ``d / delta``. The
open tour is found by nearest-fragment merging on the graph augmented with a
dummy node tied to start and end, followed by fixed-endpoint 2-opt and
Or-opt passes.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import RegionAdjacencyGraph

DUMMY_COST = 1e9


class NoPathError(RuntimeError):
    """Two nodes that must be joined are not connected in the graph."""


# ---------------------------------------------------------------------------
# Dijkstra

def shortest_path_tree(adj, src: int, targets=None):
    """Dijkstra from ``src`` over adjacency lists ``adj[u] = [(v, w), ...]``.

    Labels are compared as ``(cost, hops)``; remaining ties keep the smaller
    predecessor id. Stops once every node in ``targets`` is settled.

    Returns ``(dist, hops, pred)`` dicts over reached nodes.
    """
    dist = {src: 0.0}
    hops = {src: 0}
    pred = {src: -1}
    done = set()
    remaining = None if targets is None else set(targets) - {src}
    heap = [(0.0, 0, src)]
    while heap:
        d, h, u = heapq.heappop(heap)
        if u in done:
            continue
        if d != dist[u] or h != hops[u]:
            continue
        done.add(u)
        if remaining is not None:
            remaining.discard(u)
            if not remaining:
                break
        for v, w in adj[u]:
            if v in done:
                continue
            nd, nh = d + w, h + 1
            if v not in dist or (nd, nh) < (dist[v], hops[v]) or (
                nd == dist[v] and nh == hops[v] and u < pred[v]
            ):
                dist[v], hops[v], pred[v] = nd, nh, u
                heapq.heappush(heap, (nd, nh, v))
    return dist, hops, pred


def _trace(pred, src, dst):
    path = [dst]
    while path[-1] != src:
        path.append(pred[path[-1]])
    return path[::-1]


def dijkstra_shortest_path(g: RegionAdjacencyGraph, src: int, dst: int, adj=None):
    """Minimum ``cost_total`` path from ``src`` to ``dst``.

    Returns ``(nodes, cost)``; ``(None, inf)`` if ``dst`` is unreachable.
    ``src == dst`` gives ``([], 0.0)``.
    """
    for n in (src, dst):
        if not 1 <= n <= g.n_nodes:
            raise KeyError(f"node {n} not in graph")
    if src == dst:
        return [], 0.0
    adj = g.adjacency() if adj is None else adj
    dist, _, pred = shortest_path_tree(adj, src, [dst])
    if dst not in dist:
        return None, float("inf")
    return _trace(pred, src, dst), dist[dst]


# ---------------------------------------------------------------------------
# Simplified graph

@dataclass
class TspGraph:
    """Dense graph over ``nodes = [start, end, *must_pass]`` (RAG ids)."""

    nodes: list[int]
    positions_mm: np.ndarray
    cost: np.ndarray
    euclid: np.ndarray
    delta_mm: float
    M: float
    qualifying: np.ndarray
    reachable: np.ndarray
    paths: dict = field(default_factory=dict)

    @property
    def start(self) -> int:
        return self.nodes[0]

    @property
    def end(self) -> int:
        return self.nodes[1]

    def path_between(self, a: int, b: int):
        """Cached RAG path between V' indices ``a`` and ``b`` (or None)."""
        if (a, b) in self.paths:
            return self.paths[(a, b)]
        if (b, a) in self.paths:
            p = self.paths[(b, a)]
            return None if p is None else p[::-1]
        return None


def build_tsp_graph(
    g: RegionAdjacencyGraph,
    must_pass,
    start: int,
    end: int,
    delta_mm: float = 50.0,
    adj=None,
) -> TspGraph:
    """Pairwise cost matrix over start, end and the must-pass nodes.

    Qualifying pairs (centroid distance <= delta) get their Dijkstra cost
    divided by the largest qualifying cost; unreachable qualifying pairs get
    ``d / delta + 1`` and are left out of the maximum. Other pairs cost
    ``d / delta``.
    """
    if start == end:
        raise ValueError("start and end must differ")
    if delta_mm <= 0:
        raise ValueError("delta_mm must be positive")
    mp = [int(n) for n in np.asarray(must_pass, dtype=np.int64).ravel()]
    nodes = [int(start), int(end)]
    for n in mp:
        if n not in nodes:
            nodes.append(n)
    for n in nodes:
        if not 1 <= n <= g.n_nodes:
            raise KeyError(f"node {n} not in graph")
    adj = g.adjacency() if adj is None else adj
    pos = g.centroids_mm[nodes]
    k = len(nodes)
    eu = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    qual = eu <= delta_mm
    np.fill_diagonal(qual, False)
    raw = np.full((k, k), np.nan)
    reach = np.ones((k, k), dtype=bool)
    paths = {}
    for a in range(k):
        tg = [nodes[b] for b in range(a + 1, k) if qual[a, b]]
        if not tg:
            continue
        dist, _, pred = shortest_path_tree(adj, nodes[a], tg)
        for b in range(a + 1, k):
            if not qual[a, b]:
                continue
            if nodes[b] in dist:
                raw[a, b] = raw[b, a] = dist[nodes[b]]
                paths[(a, b)] = _trace(pred, nodes[a], nodes[b])
            else:
                reach[a, b] = reach[b, a] = False
                paths[(a, b)] = None
    ok = qual & reach
    M = float(raw[ok].max()) if ok.any() else 0.0
    C = eu / delta_mm
    if ok.any():
        C[ok] = raw[ok] / M if M > 0 else 0.0
    bad = qual & ~reach
    C[bad] = eu[bad] / delta_mm + 1.0
    np.fill_diagonal(C, 0.0)
    return TspGraph(nodes, pos, C, eu, float(delta_mm), M, qual, reach, paths)


# ---------------------------------------------------------------------------
# Open TSP

def nearest_fragment_tour(cost: np.ndarray) -> list[int]:
    """Closed tour by greedy fragment merging.

    Every node starts as its own fragment; repeatedly join the cheapest pair
    of fragment endpoints from different fragments (ties: lowest
    ``(min_id, max_id)``), then close the single remaining fragment.
    """
    n = len(cost)
    if n == 1:
        return [0]
    iu, ju = np.triu_indices(n, 1)
    w = cost[iu, ju]
    order = np.lexsort((ju, iu, w))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    deg = [0] * n
    adj = [[] for _ in range(n)]
    added = 0
    for e in order:
        i, j = int(iu[e]), int(ju[e])
        if deg[i] >= 2 or deg[j] >= 2:
            continue
        ri, rj = find(i), find(j)
        if ri == rj:
            continue
        parent[ri] = rj
        deg[i] += 1
        deg[j] += 1
        adj[i].append(j)
        adj[j].append(i)
        added += 1
        if added == n - 1:
            break
    ends = [x for x in range(n) if deg[x] < 2]
    if n > 2:
        a, b = ends
        adj[a].append(b)
        adj[b].append(a)
    tour = [0]
    prev, cur = -1, 0
    while len(tour) < n:
        nxt = adj[cur][0] if adj[cur][0] != prev else adj[cur][1]
        tour.append(nxt)
        prev, cur = cur, nxt
    return tour


def _path_cost(C, order):
    return float(sum(C[order[i], order[i + 1]] for i in range(len(order) - 1)))


def _two_opt(C, order, eps):
    improved = True
    while improved:
        improved = False
        for i in range(1, len(order) - 2):
            for j in range(i + 1, len(order) - 1):
                a, b, c, d = order[i - 1], order[i], order[j], order[j + 1]
                if C[a, c] + C[b, d] < C[a, b] + C[c, d] - eps:
                    order[i:j + 1] = order[i:j + 1][::-1]
                    improved = True
    return order


def _or_opt(C, order, eps):
    """Move segments of 1-3 interior nodes to their best position (either direction)."""
    improved = True
    while improved:
        improved = False
        n = len(order)
        for L in (1, 2, 3):
            for i in range(1, n - L):
                seg = order[i:i + L]
                a, b = order[i - 1], order[i + L]
                gain = C[a, seg[0]] + C[seg[-1], b] - C[a, b]
                rest = order[:i] + order[i + L:]
                best = None
                for k in range(len(rest) - 1):
                    p, q = rest[k], rest[k + 1]
                    for s in (seg, seg[::-1]):
                        add = C[p, s[0]] + C[s[-1], q] - C[p, q]
                        if add < gain - eps and (best is None or add < best[0]):
                            best = (add, k, s)
                if best is not None:
                    _, k, s = best
                    order[:] = rest[:k + 1] + list(s) + rest[k + 1:]
                    improved = True
                    break
            if improved:
                break
    return order


def improve_open_path(C: np.ndarray, order: list[int]) -> list[int]:
    """2-opt and Or-opt until neither helps; first and last node stay put."""
    order = list(order)
    if len(order) < 4:
        return order
    eps = 1e-12 * max(float(np.abs(C).max()), 1e-300)
    while True:
        before = _path_cost(C, order)
        order = _two_opt(C, order, eps)
        order = _or_opt(C, order, eps)
        if _path_cost(C, order) >= before - eps:
            return order


def solve_open_tsp_matrix(C: np.ndarray, start: int = 0, end: int = 1, improve: bool = True) -> list[int]:
    """Open tour over matrix indices from ``start`` to ``end`` visiting all."""
    C = np.asarray(C, dtype=np.float64)
    n = len(C)
    if n < 2:
        raise ValueError("need at least two nodes")
    if n == 2:
        return [start, end]
    # Dummy takes index 0 so its zero-cost edges win every tie.
    aug = np.full((n + 1, n + 1), DUMMY_COST)
    aug[1:, 1:] = C
    aug[0, 0] = 0.0
    aug[0, start + 1] = aug[start + 1, 0] = 0.0
    aug[0, end + 1] = aug[end + 1, 0] = 0.0
    tour = [x - 1 for x in nearest_fragment_tour(aug)[1:]]
    if tour[0] != start:
        tour = tour[::-1]
    if improve:
        tour = improve_open_path(C, tour)
    return tour


def solve_open_tsp(tg: TspGraph, improve: bool = True) -> list[int]:
    """Visiting order of ``tg.nodes`` as RAG node ids, start first, end last."""
    order = solve_open_tsp_matrix(tg.cost, 0, 1, improve=improve)
    return [tg.nodes[i] for i in order]


# ---------------------------------------------------------------------------
# Stitching

@dataclass(frozen=True)
class TrackedPath:
    node_ids: list[int]
    points_mm: np.ndarray
    total_cost: float


def stitch_full_path(g: RegionAdjacencyGraph, tg: TspGraph | None, order, adj=None) -> TrackedPath:
    """Concatenate RAG shortest paths between consecutive ordered nodes."""
    order = [int(n) for n in order]
    if not order:
        raise ValueError("empty order")
    adj = g.adjacency() if adj is None else adj
    index = {n: i for i, n in enumerate(tg.nodes)} if tg is not None else {}
    full = [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        seg = None
        if a in index and b in index:
            seg = tg.path_between(index[a], index[b])
        if seg is None:
            seg, _ = dijkstra_shortest_path(g, a, b, adj=adj)
            if seg is None:
                raise NoPathError(f"nodes {a} and {b} are not connected in the graph")
            if not seg:
                seg = [a]
        full.extend(seg[1:])
    cost = 0.0
    ct = g.cost_total
    for u, v in zip(full[:-1], full[1:]):
        cost += float(ct[g.edge_index(u, v)])
    return TrackedPath(full, g.centroids_mm[full].copy(), cost)


def export_path_csv(path: TrackedPath, filename) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_mm", "y_mm", "z_mm", "node_id"])
        for p, n in zip(path.points_mm, path.node_ids):
            w.writerow([f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", int(n)])


def export_path_vtk(path: TrackedPath, filename) -> None:
    """Legacy ASCII VTK POLYDATA with a single polyline."""
    pts = np.asarray(path.points_mm, float)
    n = len(pts)
    lines = [
        "# vtk DataFile Version 3.0",
        "tubetrack tracked path",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n} float",
    ]
    lines += [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}" for p in pts]
    lines.append(f"LINES 1 {n + 1}")
    lines.append(" ".join([str(n)] + [str(i) for i in range(n)]))
    Path(filename).write_text("\n".join(lines) + "\n")
