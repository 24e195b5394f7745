"""Must-pass node sampling from local peaks of the distance-to-wall map."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .supervoxel import SupervoxelLabeling
from .volume_io import Volume

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class MustPassNodeSet:
    node_ids: np.ndarray
    peak_positions_mm: np.ndarray
    peak_values_mm: np.ndarray
    theta_v: float
    theta_d: float
    n_dropped_duplicates: int = 0

    def __len__(self) -> int:
        return len(self.node_ids)


def local_peak_candidates(dist: np.ndarray, theta_v: float, collapse_plateaus: bool = False) -> np.ndarray:
    """Voxel indices ``(k, 3)`` of local maxima over the 26-neighbourhood.

    A voxel qualifies when it is >= every neighbour and >= ``theta_v``. By
    default every voxel of a plateau qualifies and the later distance-based
    suppression thins it out, so a ridge such as a tube axis yields a string
    of samples. With ``collapse_plateaus`` only the lexicographically smallest
    voxel of each 26-connected plateau is kept.
    """
    dist = np.asarray(dist, dtype=np.float64)
    mx = ndimage.maximum_filter(dist, footprint=_STRUCT26, mode="constant", cval=-np.inf)
    cand = (dist >= mx) & (dist >= theta_v) & (dist > 0)
    if not cand.any():
        return np.zeros((0, 3), dtype=np.int64)
    if not collapse_plateaus:
        return np.argwhere(cand)
    comp, _ = ndimage.label(cand, structure=_STRUCT26)
    flat = comp.ravel()
    nz = np.flatnonzero(flat)
    # nz is ascending flat (C-order == lexicographic) index: first hit per component.
    _, first = np.unique(flat[nz], return_index=True)
    return np.array(np.unravel_index(nz[first], dist.shape)).T


def greedy_suppression(points_mm: np.ndarray, values: np.ndarray, order_key: np.ndarray, theta_d: float) -> np.ndarray:
    """Indices kept by descending-value greedy suppression.

    A candidate is rejected if it lies strictly closer than ``theta_d`` to an
    already accepted one. Ties in value go to the smaller ``order_key``.
    """
    order = np.lexsort((order_key, -values))
    kept: list[int] = []
    for k in order:
        if kept:
            d = np.linalg.norm(points_mm[kept] - points_mm[k], axis=1)
            if np.any(d < theta_d):
                continue
        kept.append(int(k))
    return np.asarray(kept, dtype=np.int64)


def sample_must_pass(
    dist: Volume,
    labeling: SupervoxelLabeling,
    theta_v: float = 3.0,
    theta_d: float = 6.0,
    collapse_plateaus: bool = False,
) -> MustPassNodeSet:
    """Sample must-pass supervoxels at distance-map peaks.

    Parameters
    ----------
    dist : Volume
        Distance (mm) to the nearest obstacle, where obstacles are voxels
        outside the segmentation or on a binarised wall.
    labeling : SupervoxelLabeling
        Supervoxels on the same grid; each accepted peak maps to the id
        containing it. Repeated ids are dropped (count kept in
        ``n_dropped_duplicates``).
    theta_v, theta_d : float
        Minimum peak value and minimum spacing between peaks, in mm.
    collapse_plateaus : bool
        See :func:`local_peak_candidates`.
    """
    if theta_v <= 0 or theta_d <= 0:
        raise ValueError("theta_v and theta_d must be positive")
    vox = local_peak_candidates(dist.data, theta_v, collapse_plateaus)
    if len(vox) == 0:
        return MustPassNodeSet(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0), theta_v, theta_d)
    vals = np.asarray(dist.data, float)[tuple(vox.T)]
    pos = dist.index_to_mm(vox)
    lex = np.ravel_multi_index(vox.T, dist.dims)
    kept = greedy_suppression(pos, vals, lex, theta_d)
    lab = np.asarray(labeling.labels.data)[tuple(vox[kept].T)]
    ids, keep_pos, keep_val = [], [], []
    seen = set()
    dropped = 0
    for k, l in zip(kept, lab):
        if l == 0:
            continue
        if l in seen:
            dropped += 1
            continue
        seen.add(int(l))
        ids.append(int(l))
        keep_pos.append(pos[k])
        keep_val.append(vals[k])
    return MustPassNodeSet(
        np.asarray(ids, dtype=np.int64),
        np.asarray(keep_pos, float).reshape(-1, 3),
        np.asarray(keep_val, float),
        theta_v,
        theta_d,
        dropped,
    )


def export_peaks_csv(mp: MustPassNodeSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_mm", "y_mm", "z_mm", "distance_mm", "supervoxel_id"])
        for p, v, i in zip(mp.peak_positions_mm, mp.peak_values_mm, mp.node_ids):
            w.writerow([f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", f"{v:.6f}", int(i)])
