"""Mask-restricted SLIC supervoxels with SLIC-zero style adaptive feature scaling.

The feature channel is the wall-detection response. Distances combine the
feature term normalised per cluster (the normaliser adapts to the largest
feature deviation seen inside the cluster on the previous pass, starting from
``compactness``) with the spatial term normalised by the grid step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume_io import Volume

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class SupervoxelLabeling:
    """Supervoxel partition of a mask.

    Per-id arrays have length ``count + 1`` so they can be indexed by label;
    entry 0 (background) is NaN / zero.
    """

    labels: Volume
    count: int
    centroids_mm: np.ndarray
    mean_feature: np.ndarray
    sizes: np.ndarray

    @property
    def mean_position(self) -> np.ndarray:
        return self.centroids_mm

    @property
    def ids(self) -> np.ndarray:
        return np.arange(1, self.count + 1)

    def label_at_mm(self, xyz) -> int:
        """Label of the voxel containing a physical point (0 if outside)."""
        idx = np.round(self.labels.mm_to_index(xyz)).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.labels.dims)):
            return 0
        return int(self.labels.data[tuple(idx)])

    def nearest_label_mm(self, xyz) -> int:
        """Label containing ``xyz``, else the label with the nearest centroid."""
        lab = self.label_at_mm(xyz)
        if lab:
            return lab
        d = np.linalg.norm(self.centroids_mm[1:] - np.asarray(xyz, float), axis=1)
        return int(np.argmin(d)) + 1


def _seed_centers(mask: np.ndarray, step: float, n_target: int) -> np.ndarray:
    """Regular-grid seeds: the ``n_target`` best-filled grid cells, each seeded
    at its in-mask voxel closest to the cell centre."""
    coords = np.argwhere(mask)
    lo = coords.min(axis=0)
    cell = np.floor((coords - lo) / step).astype(np.int64)
    ncell = cell.max(axis=0) + 1
    flat = np.ravel_multi_index(cell.T, ncell)
    order = np.argsort(flat, kind="stable")
    flat_s = flat[order]
    uniq, start, counts = np.unique(flat_s, return_index=True, return_counts=True)
    # Most-occupied cells first; ties by cell index.
    pick = np.lexsort((uniq, -counts))[:n_target]
    pick.sort()
    seeds = []
    for k in pick:
        members = coords[order[start[k]:start[k] + counts[k]]]
        cidx = np.array(np.unravel_index(uniq[k], ncell))
        centre = lo + (cidx + 0.5) * step - 0.5
        d = ((members - centre) ** 2).sum(axis=1)
        seeds.append(members[np.argmin(d)])
    return np.asarray(seeds, dtype=float)


def _enforce_connectivity(lab: np.ndarray, centroids: dict) -> np.ndarray:
    """Keep the largest 26-connected piece of each label; hand the other
    pieces to the touching label with the nearest centroid."""
    out = lab.copy()
    orphans = []
    objs = ndimage.find_objects(lab)
    for k, sl in enumerate(objs, start=1):
        if sl is None:
            continue
        sub = lab[sl] == k
        comp, n = ndimage.label(sub, structure=_STRUCT26)
        if n <= 1:
            continue
        sizes = np.bincount(comp.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
        for c in range(1, n + 1):
            if c == keep:
                continue
            vox = np.argwhere(comp == c) + np.array([s.start for s in sl])
            out[tuple(vox.T)] = 0
            orphans.append(vox)
    # Assign orphans to touching labels until no progress; remaining ones are
    # isolated and become new labels.
    next_id = int(lab.max()) + 1
    pending = orphans
    while pending:
        progressed = False
        rest = []
        for vox in pending:
            touching = _touching_labels(out, vox)
            if touching.size == 0:
                rest.append(vox)
                continue
            c = vox.mean(axis=0)
            dist = [np.sum((centroids[t] - c) ** 2) if t in centroids else np.inf for t in touching]
            out[tuple(vox.T)] = int(touching[int(np.argmin(dist))])
            progressed = True
        pending = rest
        if not progressed:
            for vox in pending:
                out[tuple(vox.T)] = next_id
                centroids[next_id] = vox.mean(axis=0)
                next_id += 1
            break
    return out


def _touching_labels(lab: np.ndarray, vox: np.ndarray) -> np.ndarray:
    lo = np.maximum(vox.min(axis=0) - 1, 0)
    hi = np.minimum(vox.max(axis=0) + 2, lab.shape)
    sub = lab[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    piece = np.zeros(sub.shape, dtype=bool)
    piece[tuple((vox - lo).T)] = True
    ring = ndimage.binary_dilation(piece, structure=_STRUCT26) & ~piece
    vals = np.unique(sub[ring])
    return vals[vals > 0]


def _relabel_sequential(lab: np.ndarray) -> np.ndarray:
    """Ids 1..N in order of each label's first voxel in C order."""
    flat = lab.ravel()
    vals, first = np.unique(flat, return_index=True)
    keep = vals > 0
    vals, first = vals[keep], first[keep]
    order = vals[np.argsort(first)]
    lut = np.zeros(int(lab.max()) + 1, dtype=np.int32)
    lut[order] = np.arange(1, len(order) + 1, dtype=np.int32)
    return lut[lab]


def slic_supervoxels(
    feature: Volume,
    mask: Volume,
    target_sv_volume_mm3: float = 216.0,
    compactness: float = 0.01,
    seed: int = 0,
    n_iter: int = 10,
) -> SupervoxelLabeling:
    """Partition ``mask`` into roughly ``mask_volume / target_sv_volume_mm3`` supervoxels.

    ``seed`` is accepted for interface stability; seeding is a deterministic
    grid so the result does not depend on it.
    """
    if target_sv_volume_mm3 <= 0:
        raise ValueError("target_sv_volume_mm3 must be positive")
    if compactness <= 0:
        raise ValueError("compactness must be positive")
    m = np.asarray(mask.data).astype(bool)
    if not m.any():
        raise ValueError("segmentation mask is empty")
    if m.shape != feature.dims:
        raise ValueError("feature and mask grids differ")
    spacing = feature.spacing_mm
    voxel_mm3 = spacing**3
    n_vox = int(m.sum())
    n_target = max(1, int(round(n_vox * voxel_mm3 / target_sv_volume_mm3)))
    step = (target_sv_volume_mm3 / voxel_mm3) ** (1.0 / 3.0)

    # Work inside the mask bounding box.
    bb = ndimage.find_objects(m.astype(np.int8))[0]
    mb = m[bb]
    fb = np.asarray(feature.data, dtype=np.float64)[bb]

    if n_target == 1:
        lab = mb.astype(np.int32)
    else:
        lab = _slic_iterate(fb, mb, step, n_target, compactness, n_iter)

    cents = {}
    for k, sl in enumerate(ndimage.find_objects(lab), start=1):
        if sl is not None:
            cents[k] = np.argwhere(lab[sl] == k).mean(axis=0) + [s.start for s in sl]
    lab = _enforce_connectivity(lab, cents)
    lab = _relabel_sequential(lab)

    full = np.zeros(m.shape, dtype=np.int32)
    full[bb] = lab
    return _summarize(full, feature)


def _slic_iterate(fb, mb, step, n_target, compactness, n_iter):
    centers = _seed_centers(mb, step, n_target)
    k = len(centers)
    cidx = np.round(centers).astype(int)
    cfeat = fb[tuple(cidx.T)].copy()
    cnorm = np.full(k, compactness)
    shape = np.array(mb.shape)
    win = int(np.ceil(2 * step))
    lab = np.zeros(mb.shape, dtype=np.int32)
    inv_s2 = 1.0 / step**2
    coords = np.argwhere(mb)
    fvals = fb[mb]
    for _ in range(n_iter):
        best = np.full(mb.shape, np.inf)
        lab[:] = 0
        for j in range(k):
            c = centers[j]
            lo = np.maximum(np.floor(c).astype(int) - win, 0)
            hi = np.minimum(np.ceil(c).astype(int) + win + 1, shape)
            sl = tuple(slice(a, b) for a, b in zip(lo, hi))
            sub_m = mb[sl]
            if not sub_m.any():
                continue
            gx, gy, gz = np.ogrid[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
            ds = ((gx - c[0]) ** 2 + (gy - c[1]) ** 2 + (gz - c[2]) ** 2) * inv_s2
            df = ((fb[sl] - cfeat[j]) / cnorm[j]) ** 2
            d = np.where(sub_m, ds + df, np.inf)
            sub_best = best[sl]
            better = d < sub_best
            sub_best[better] = d[better]
            lab[sl][better] = j + 1
        # Update step: stable per-cluster accumulation via bincount.
        lv = lab[mb]
        assigned = lv > 0
        cnt = np.bincount(lv[assigned], minlength=k + 1)[1:]
        alive = cnt > 0
        for a in range(3):
            s = np.bincount(lv[assigned], weights=coords[assigned, a], minlength=k + 1)[1:]
            centers[alive, a] = s[alive] / cnt[alive]
        fs = np.bincount(lv[assigned], weights=fvals[assigned], minlength=k + 1)[1:]
        cfeat[alive] = fs[alive] / cnt[alive]
        dev = np.abs(fvals[assigned] - cfeat[lv[assigned] - 1])
        maxdev = np.zeros(k)
        np.maximum.at(maxdev, lv[assigned] - 1, dev)
        cnorm = np.maximum(maxdev, compactness)

    # Voxels outside every search window take the nearest labelled voxel.
    missing = mb & (lab == 0)
    if missing.any():
        _, idx = ndimage.distance_transform_edt(lab == 0, return_indices=True)
        lab[missing] = lab[tuple(i[missing] for i in idx)]
    return lab


def _summarize(labels: np.ndarray, feature: Volume) -> SupervoxelLabeling:
    n = int(labels.max())
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=n + 1)
    idx = np.indices(labels.shape).reshape(3, -1).astype(np.float64)
    pos = feature.index_to_mm(idx.T).T
    cents = np.full((n + 1, 3), np.nan)
    nz = sizes > 0
    nz[0] = False
    for a in range(3):
        s = np.bincount(flat, weights=pos[a], minlength=n + 1)
        cents[nz, a] = s[nz] / sizes[nz]
    fsum = np.bincount(flat, weights=np.asarray(feature.data, float).ravel(), minlength=n + 1)
    mf = np.zeros(n + 1)
    mf[nz] = fsum[nz] / sizes[nz]
    lab_vol = feature.with_data(labels.astype(np.int32))
    return SupervoxelLabeling(lab_vol, n, cents, mf, sizes)


def labeling_from_array(labels: np.ndarray, feature: Volume) -> SupervoxelLabeling:
    """Wrap an existing integer label array (ids must be 1..N, 0 = outside)."""
    return _summarize(np.asarray(labels, dtype=np.int32), feature)
