"""End-to-end tracking: filters, supervoxels, graph, sampling, cylinders, TSP."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import filters, graph, sampling, supervoxel, tsp
from .config import PipelineConfig
from .cylinders import Cylinder, fit_local_cylinders
from .volume_io import Volume, crop, resample_isotropic

log = logging.getLogger("tubetrack")


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"[{name}] {exc}") from exc
    finally:
        timings[name] = time.perf_counter() - t0


@dataclass
class PreparedGraph:
    """Everything that does not depend on the tracking mode."""

    volume: Volume
    segmentation: Volume
    walls: Volume
    walls_bin: Volume
    distance: Volume
    labeling: supervoxel.SupervoxelLabeling
    rag: graph.RegionAdjacencyGraph
    must_pass: sampling.MustPassNodeSet
    cylinders: list[Cylinder] | None = None
    timings: dict = field(default_factory=dict)


@dataclass
class TrackResult:
    mode: str
    path: tsp.TrackedPath
    start_node: int
    end_node: int
    tsp_graph: tsp.TspGraph | None
    rag: graph.RegionAdjacencyGraph
    timings: dict = field(default_factory=dict)


def preprocess_inputs(volume: Volume, segmentation: Volume, cfg: PipelineConfig):
    """Optional z-crop, then resample both to the configured isotropic spacing."""
    if cfg.volume.crop_z is not None:
        volume = crop(volume, z=cfg.volume.crop_z)
        segmentation = crop(segmentation, z=cfg.volume.crop_z)
    target = cfg.volume.spacing_mm
    if not (volume.is_isotropic and abs(volume.spacing[0] - target) < 1e-9):
        volume = resample_isotropic(volume, target)
    if not (segmentation.is_isotropic and abs(segmentation.spacing[0] - target) < 1e-9):
        seg = resample_isotropic(segmentation.with_data(segmentation.data.astype(np.float32)), target)
        segmentation = seg.with_data(seg.data >= 0.5)
    else:
        segmentation = segmentation.with_data(np.asarray(segmentation.data) != 0)
    if not volume.same_grid(segmentation):
        raise PipelineError("[input] segmentation grid does not match the volume after resampling")
    return volume, segmentation


def prepare(volume: Volume, segmentation: Volume, cfg: PipelineConfig, need_cylinders: bool = True) -> PreparedGraph:
    cfg.validate()
    t: dict = {}
    with _stage("input", t):
        volume, segmentation = preprocess_inputs(volume, segmentation, cfg)
        if not segmentation.data.any():
            raise PipelineError("[input] segmentation is empty")
    sp = volume.spacing_mm
    with _stage("filters", t):
        scales = [s * sp for s in cfg.filters.scales_vox]
        walls = filters.meijering_valley(volume, scales, dark_walls=cfg.filters.dark_walls)
        walls_bin = filters.binarize_walls(walls, cfg.filters.binarize_threshold)
    log.info("filters: %d wall voxels (%.2fs)", int(walls_bin.data.sum()), t["filters"])
    with _stage("supervoxels", t):
        lab = supervoxel.slic_supervoxels(
            walls,
            segmentation,
            cfg.supervoxel.target_volume_mm3,
            cfg.supervoxel.compactness,
            seed=cfg.seed,
            n_iter=cfg.supervoxel.n_iter,
        )
    log.info("supervoxels: N=%d (%.2fs)", lab.count, t["supervoxels"])
    with _stage("graph", t):
        rag = graph.build_rag(lab, lam=cfg.graph.lam)
        rag = graph.compute_wall_costs(rag, walls)
    log.info("graph: %d nodes, %d edges (%.2fs)", rag.n_nodes, rag.n_edges, t["graph"])
    with _stage("sampling", t):
        obstacles = filters.wall_obstacles(segmentation, walls_bin)
        dist = filters.euclidean_distance_transform(obstacles)
        mp = sampling.sample_must_pass(dist, lab, cfg.sampling.theta_v_mm, cfg.sampling.theta_d_mm)
    if len(mp) == 0:
        log.warning("sampling: no must-pass nodes; tracking reduces to a shortest path")
    log.info("sampling: |V_mp|=%d, %d duplicates dropped (%.2fs)", len(mp), mp.n_dropped_duplicates, t["sampling"])
    prep = PreparedGraph(volume, segmentation, walls, walls_bin, dist, lab, rag, mp, None, t)
    if need_cylinders:
        fit_cylinders(prep, cfg)
    return prep


def fit_cylinders(prep: PreparedGraph, cfg: PipelineConfig) -> list[Cylinder]:
    c = cfg.cylinders
    with _stage("cylinders", prep.timings):
        cyls = fit_local_cylinders(
            prep.walls_bin,
            prep.must_pass.peak_positions_mm,
            patch_mm=c.patch_mm,
            height_mm=c.height_mm,
            iterations=c.iterations,
            inlier_tol_mm=c.inlier_tol_mm,
            radius_range=(c.radius_min_mm, c.radius_max_mm),
            min_support=c.min_support,
            seed=cfg.seed,
            threads=cfg.threads,
        )
        prep.cylinders = cyls
        prep.rag = graph.compute_cylinder_costs(prep.rag, cyls)
    log.info(
        "cylinders: %d/%d valid (%.2fs)",
        sum(cy.valid for cy in cyls), len(cyls), prep.timings["cylinders"],
    )
    return cyls


def _endpoint_node(lab: supervoxel.SupervoxelLabeling, xyz, what: str) -> int:
    node = lab.label_at_mm(xyz)
    if node == 0:
        raise PipelineError(f"[endpoints] {what} point {np.round(xyz, 3).tolist()} lies outside the segmentation")
    return node


def track(prep: PreparedGraph, start_mm, end_mm, cfg: PipelineConfig, mode: str | None = None) -> TrackResult:
    """Track one path. ``sp``: shortest path, wall cost only; ``tsp``: must-pass
    nodes, wall cost only; ``tsp+cyl``: must-pass nodes and cylinder term."""
    mode = cfg.mode if mode is None else mode
    t: dict = {}
    s = _endpoint_node(prep.labeling, start_mm, "start")
    e = _endpoint_node(prep.labeling, end_mm, "end")
    if s == e:
        raise PipelineError("[endpoints] start and end fall in the same supervoxel")
    if mode == "tsp+cyl":
        if prep.cylinders is None:
            fit_cylinders(prep, cfg)
        g = prep.rag.with_lambda(cfg.graph.lam)
    elif mode in ("sp", "tsp"):
        g = prep.rag.with_lambda(0.0)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    adj = g.adjacency()
    tg = None
    with _stage("tsp", t):
        if mode == "sp" or len(prep.must_pass) == 0:
            nodes, _ = tsp.dijkstra_shortest_path(g, s, e, adj=adj)
            if nodes is None:
                raise PipelineError("[tsp] end node is unreachable from the start node")
            path = tsp.stitch_full_path(g, None, nodes, adj=adj)
        else:
            tg = tsp.build_tsp_graph(g, prep.must_pass.node_ids, s, e, cfg.tsp.delta_mm, adj=adj)
            order = tsp.solve_open_tsp(tg, improve=cfg.tsp.improve)
            try:
                path = tsp.stitch_full_path(g, tg, order, adj=adj)
            except tsp.NoPathError as exc:
                raise PipelineError(f"[stitch] {exc}") from exc
    log.info("%s: path of %d nodes, cost %.4f (%.2fs)", mode, len(path.node_ids), path.total_cost, t["tsp"])
    return TrackResult(mode, path, s, e, tg, g, t)


def run(volume: Volume, segmentation: Volume, start_mm, end_mm, cfg: PipelineConfig, mode: str | None = None):
    mode = cfg.mode if mode is None else mode
    prep = prepare(volume, segmentation, cfg, need_cylinders=(mode == "tsp+cyl"))
    return prep, track(prep, start_mm, end_mm, cfg, mode)
