"""Local cylinder fitting on binarised wall voxels with RANSAC.

Each hypothesis comes from three sampled points: the axis is the normal of the
plane through them, and the circumcircle of the three (already lying in a
plane orthogonal to that axis) gives the axis position and radius.
Hypotheses are scored by inlier count against the infinite cylinder, with
the inlier residual as tie-break.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .volume_io import Volume

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_CHUNK = 4096


@dataclass(frozen=True)
class Cylinder:
    center_mm: np.ndarray
    axis: np.ndarray
    radius_mm: float
    height_mm: float
    inlier_count: int
    valid: bool

    @classmethod
    def invalid(cls, height_mm: float = 0.0, inlier_count: int = 0, center_mm=None) -> "Cylinder":
        c = np.zeros(3) if center_mm is None else np.asarray(center_mm, float)
        return cls(c, np.array([0.0, 0.0, 1.0]), 0.0, float(height_mm), int(inlier_count), False)

    def contains(self, p) -> bool:
        d = np.asarray(p, float) - self.center_mm
        ax = float(d @ self.axis)
        rad2 = float(d @ d) - ax * ax
        return abs(ax) <= self.height_mm / 2 and rad2 <= self.radius_mm**2 + 1e-12


def canonical_axis(a: np.ndarray) -> np.ndarray:
    """Unit axis with its largest-magnitude component made positive."""
    a = np.asarray(a, float)
    a = a / np.linalg.norm(a)
    k = int(np.argmax(np.abs(a)))
    return -a if a[k] < 0 else a


def _sample_triples(rng: np.random.Generator, n: int, iterations: int) -> np.ndarray:
    """``(iterations, 3)`` indices, distinct within each row."""
    i0 = rng.integers(0, n, iterations)
    i1 = rng.integers(0, n - 1, iterations)
    i1 = i1 + (i1 >= i0)
    i2 = rng.integers(0, n - 2, iterations)
    lo, hi = np.minimum(i0, i1), np.maximum(i0, i1)
    i2 = i2 + (i2 >= lo)
    i2 = i2 + (i2 >= hi)
    return np.stack([i0, i1, i2], axis=1)


def _hypotheses(P: np.ndarray, tri: np.ndarray):
    """Axis, a point on the axis and radius for each triple; degenerate rows dropped."""
    A, B, C = P[tri[:, 0]], P[tri[:, 1]], P[tri[:, 2]]
    u, v = B - A, C - A
    n = np.cross(u, v)
    nn = np.linalg.norm(n, axis=1)
    uu = np.einsum("ij,ij->i", u, u)
    vv = np.einsum("ij,ij->i", v, v)
    uv = np.einsum("ij,ij->i", u, v)
    den = 2.0 * (uu * vv - uv**2)
    # |u x v|^2 == uu*vv - uv^2; reject near-collinear triples on a relative scale.
    ok = nn > 1e-9 * np.maximum(uu, vv)
    ok &= den > 0
    s = np.zeros_like(uu)
    t = np.zeros_like(uu)
    s[ok] = vv[ok] * (uu[ok] - uv[ok]) / den[ok]
    t[ok] = uu[ok] * (vv[ok] - uv[ok]) / den[ok]
    center = A + s[:, None] * u + t[:, None] * v
    radius = np.linalg.norm(center - A, axis=1)
    axis = np.zeros_like(n)
    axis[ok] = n[ok] / nn[ok, None]
    return axis, center, radius, ok


def _score_numpy(P, sqP, axes, centers, radii, tol):
    """Inlier count and inlier sum of squared residuals per hypothesis.

    Squared radial distances are expanded into matrix products,
    ``|p-c|^2 - ((p-c).a)^2``.
    """
    pa = P @ axes.T
    pc = P @ centers.T
    ca = np.einsum("ck,ck->c", centers, axes)
    cc = np.einsum("ck,ck->c", centers, centers)
    r2 = np.maximum(sqP[:, None] - 2.0 * pc + cc[None, :] - (pa - ca[None, :]) ** 2, 0.0)
    res = np.abs(np.sqrt(r2) - radii[None, :])
    inl = res <= tol
    return inl.sum(axis=0), np.where(inl, res * res, 0.0).sum(axis=0)


def _score_loop(P, sqP, axes, centers, radii, tol):
    count = np.zeros(len(radii), dtype=np.int64)
    sse = np.zeros(len(radii))
    for c in range(len(radii)):
        ax, ay, az = axes[c, 0], axes[c, 1], axes[c, 2]
        cx, cy, cz = centers[c, 0], centers[c, 1], centers[c, 2]
        r = radii[c]
        n = 0
        acc = 0.0
        for i in range(P.shape[0]):
            dx = P[i, 0] - cx
            dy = P[i, 1] - cy
            dz = P[i, 2] - cz
            t = dx * ax + dy * ay + dz * az
            res = abs(np.sqrt(max(dx * dx + dy * dy + dz * dz - t * t, 0.0)) - r)
            if res <= tol:
                n += 1
                acc += res * res
        count[c] = n
        sse[c] = acc
    return count, sse


if numba is not None:
    _score = numba.njit(cache=True, nogil=True)(_score_loop)
else:  # pragma: no cover
    _score = _score_numpy


def fit_cylinder_ransac(
    wall_points_mm,
    iterations: int = 50_000,
    inlier_tol_mm: float = 1.0,
    radius_range=(7.04, 15.28),
    seed: int = 0,
    min_support: int = 30,
    height_mm: float = 18.0,
) -> Cylinder:
    """RANSAC fit of one cylinder.

    Returns an invalid :class:`Cylinder` when there are fewer than three
    points, when no hypothesis has a radius inside ``radius_range``, or when
    the best hypothesis has fewer than ``min_support`` inliers. Ties in inlier
    count go to the smaller sum of squared inlier residuals, then to the
    earliest hypothesis.
    """
    P = np.asarray(wall_points_mm, dtype=np.float64).reshape(-1, 3)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if len(P) < 3:
        return Cylinder.invalid(height_mm, len(P))
    rng = np.random.default_rng(seed)
    # Work relative to the cloud centroid to keep the expanded distances well conditioned.
    origin = P.mean(axis=0)
    P = P - origin
    sqP = np.einsum("ij,ij->i", P, P)
    tri = _sample_triples(rng, len(P), iterations)
    axes, centers, radii, ok = _hypotheses(P, tri)
    ok &= (radii >= radius_range[0]) & (radii <= radius_range[1])
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return Cylinder.invalid(height_mm)
    best_count, best_sse, best = -1, np.inf, -1
    for k in range(0, idx.size, _CHUNK):
        sel = idx[k:k + _CHUNK]
        cnt, sse = _score(P, sqP, axes[sel], centers[sel], radii[sel], inlier_tol_mm)
        top = cnt.max()
        cand = np.flatnonzero(cnt == top)
        j = int(cand[np.argmin(sse[cand])])
        if top > best_count or (top == best_count and sse[j] < best_sse):
            best_count, best_sse, best = int(top), float(sse[j]), int(sel[j])
    a, c, r = axes[best], centers[best], float(radii[best])
    d = P - c
    ax = d @ a
    rad = np.sqrt(np.maximum(np.einsum("ij,ij->i", d, d) - ax * ax, 0.0))
    inl = np.abs(rad - r) <= inlier_tol_mm
    # Infinite model: slide the centre along the axis to the inlier mass.
    c = c + ax[inl].mean() * a + origin
    a = canonical_axis(a)
    valid = best_count >= min_support
    return Cylinder(c, a, r, float(height_mm), best_count, bool(valid))


def patch_points(walls_bin: Volume, center_mm, patch_mm: float) -> np.ndarray:
    """Physical centres of wall voxels inside the axis-aligned cube around ``center_mm``."""
    half = patch_mm / 2.0
    lo = np.ceil(walls_bin.mm_to_index(np.asarray(center_mm) - half) - 1e-9).astype(int)
    hi = np.floor(walls_bin.mm_to_index(np.asarray(center_mm) + half) + 1e-9).astype(int) + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, walls_bin.dims)
    if np.any(hi <= lo):
        return np.zeros((0, 3))
    sub = np.asarray(walls_bin.data)[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    vox = np.argwhere(sub) + lo
    return walls_bin.index_to_mm(vox)


def fit_local_cylinders(
    walls_bin: Volume,
    peaks_mm,
    patch_mm: float = 36.0,
    height_mm: float = 18.0,
    iterations: int = 50_000,
    inlier_tol_mm: float = 1.0,
    radius_range=(7.04, 15.28),
    min_support: int = 30,
    seed: int = 0,
    threads: int = 1,
) -> list[Cylinder]:
    """Fit one cylinder per peak from the wall voxels in its cubic patch.

    Peak ``k`` uses the RNG stream ``(seed, k)`` so results do not depend on
    the number of worker threads.
    """
    peaks = np.asarray(peaks_mm, float).reshape(-1, 3)

    def one(k):
        pts = patch_points(walls_bin, peaks[k], patch_mm)
        if len(pts) < 3:
            return Cylinder.invalid(height_mm, len(pts), peaks[k])
        return fit_cylinder_ransac(
            pts,
            iterations=iterations,
            inlier_tol_mm=inlier_tol_mm,
            radius_range=radius_range,
            seed=np.random.SeedSequence([int(seed), k]),
            min_support=min_support,
            height_mm=height_mm,
        )

    if threads > 1 and len(peaks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, range(len(peaks))))
    return [one(k) for k in range(len(peaks))]


def export_cylinders_csv(cyls, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cx", "cy", "cz", "ax", "ay", "az", "r", "h", "inliers", "valid"])
        for c in cyls:
            w.writerow(
                [*(f"{x:.6f}" for x in c.center_mm), *(f"{x:.8f}" for x in c.axis),
                 f"{c.radius_mm:.6f}", f"{c.height_mm:.6f}", c.inlier_count, int(c.valid)]
            )


def export_cylinders_obj(cyls, path, segments: int = 24) -> None:
    """Side surfaces of the valid cylinders as a Wavefront OBJ mesh."""
    lines = ["# tubetrack local cylinders"]
    base = 1
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    for c in cyls:
        if not c.valid:
            continue
        a = c.axis
        ref = np.array([1.0, 0, 0]) if abs(a[0]) < 0.9 else np.array([0, 1.0, 0])
        e1 = np.cross(a, ref)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(a, e1)
        for sgn in (-0.5, 0.5):
            ring = c.center_mm + sgn * c.height_mm * a + c.radius_mm * (
                np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2
            )
            lines += [f"v {p[0]:.5f} {p[1]:.5f} {p[2]:.5f}" for p in ring]
        for s in range(segments):
            t = (s + 1) % segments
            lines.append(f"f {base + s} {base + t} {base + segments + t} {base + segments + s}")
        base += 2 * segments
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
