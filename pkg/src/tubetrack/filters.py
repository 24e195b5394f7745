"""Wall detection (Meijering neuriteness on dark valleys) and exact EDT."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .volume_io import Volume

# Meijering's modified eigenvalues in 3D: l'_i = l_i + (1/3) * (l_1 + l_2 + l_3).
_NEURITENESS_MIX = 1.0 / 3.0


def hessian_eigenvalues(data: np.ndarray, sigma_vox: float) -> np.ndarray:
    """Eigenvalues of the scale-normalised Gaussian Hessian, shape ``(*data.shape, 3)``.

    Boundaries use mirror reflection, which commutes with axis flips and
    permutations, so 90 degree rotations of the input rotate the output exactly.
    """
    data = np.asarray(data, dtype=np.float64)
    H = np.empty(data.shape + (3, 3))
    for a in range(3):
        for b in range(a, 3):
            order = [0, 0, 0]
            order[a] += 1
            order[b] += 1
            d = ndimage.gaussian_filter(data, sigma_vox, order=order, mode="reflect")
            H[..., a, b] = H[..., b, a] = d * sigma_vox**2
    return np.linalg.eigvalsh(H)


def _neuriteness(eig: np.ndarray, dark: bool) -> np.ndarray:
    mixed = eig + _NEURITENESS_MIX * eig.sum(axis=-1, keepdims=True)
    pick = np.take_along_axis(mixed, np.abs(mixed).argmax(axis=-1)[..., None], axis=-1)[..., 0]
    # Dark valleys curve upward across the structure: large positive eigenvalue.
    return np.maximum(pick, 0.0) if dark else np.maximum(-pick, 0.0)


def meijering_valley(
    v: Volume,
    scales_mm=(2.0, 3.0, 4.0),
    dark_walls: bool = True,
) -> Volume:
    """Valley-strength map in [0, 1].

    Parameters
    ----------
    v : Volume
        Input intensities (isotropic spacing).
    scales_mm : sequence of float
        Gaussian scales in millimetres; converted to voxels with ``v.spacing_mm``.
    dark_walls : bool
        If True (default) respond to dark sheets/lines between bright regions,
        otherwise to bright ones.

    Returns
    -------
    Volume
        Max-over-scales response, min-max normalised. A flat input gives zeros.
    """
    scales = [float(s) for s in np.atleast_1d(scales_mm)]
    if not scales or min(scales) <= 0:
        raise ValueError("need at least one positive scale")
    spacing = v.spacing_mm
    resp = np.zeros(v.dims)
    for s in scales:
        eig = hessian_eigenvalues(v.data, s / spacing)
        np.maximum(resp, _neuriteness(eig, dark_walls), out=resp)
    lo, hi = resp.min(), resp.max()
    # Relative guard: a constant input still leaves rounding-level curvature.
    scale = max(abs(float(np.asarray(v.data, dtype=float).max())), 1.0)
    if hi - lo <= 1e-9 * scale:
        return v.with_data(np.zeros(v.dims))
    return v.with_data((resp - lo) / (hi - lo))


def binarize_walls(w: Volume, threshold: float = 0.5) -> Volume:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return w.with_data(np.asarray(w.data) >= threshold)


def euclidean_distance_transform(obstacles, spacing_mm: float | None = None) -> Volume | np.ndarray:
    """Exact distance (mm) from every voxel to the nearest obstacle voxel.

    Accepts a mask :class:`Volume` (spacing taken from it unless overridden)
    or a bare boolean array with ``spacing_mm``; returns the same kind.
    """
    vol = obstacles if isinstance(obstacles, Volume) else None
    mask = np.asarray(vol.data if vol is not None else obstacles).astype(bool)
    if spacing_mm is None:
        if vol is None:
            raise ValueError("spacing_mm is required for array input")
        spacing_mm = vol.spacing_mm
    if not mask.any():
        raise ValueError("obstacle set is empty; distance is undefined")
    # Nearest-obstacle indices from the separable exact transform, then the
    # distance is recomputed from integer offsets so it is bit-reproducible.
    _, idx = ndimage.distance_transform_edt(~mask, return_indices=True)
    grid = np.indices(mask.shape)
    sq = np.zeros(mask.shape, dtype=np.int64)
    for k in range(mask.ndim):
        diff = (idx[k] - grid[k]).astype(np.int64)
        sq += diff * diff
    dist = float(spacing_mm) * np.sqrt(sq.astype(np.float64))
    return vol.with_data(dist) if vol is not None else dist


def wall_obstacles(segmentation: Volume, walls_bin: Volume) -> Volume:
    """Obstacle set for the distance map: outside the segmentation OR on a wall."""
    seg = np.asarray(segmentation.data).astype(bool)
    wb = np.asarray(walls_bin.data).astype(bool)
    return segmentation.with_data(~seg | wb)
