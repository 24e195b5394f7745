"""Path evaluation: curve-to-curve distance and longest error-free tracked span."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class Curve:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(p) < 2:
            raise ValueError("a curve needs at least two points")
        object.__setattr__(self, "points", p)

    @property
    def arc_length(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.arc_length[-1])

    def reversed(self) -> "Curve":
        return Curve(self.points[::-1].copy())


def resample_curve(c: Curve, step_mm: float = 1.0) -> np.ndarray:
    """Points at uniform arc-length spacing, always including both ends."""
    return _resample(c, step_mm)[0]


def _resample(c: Curve, step_mm: float):
    """Resampled points and their arc-length coordinates on the input curve."""
    s = c.arc_length
    total = s[-1]
    if total == 0:
        return c.points[:1].copy(), np.zeros(1)
    t = np.arange(0.0, total, step_mm)
    if total - t[-1] > 1e-9 * max(total, 1.0):
        t = np.append(t, total)
    else:
        t[-1] = total
    out = np.empty((len(t), 3))
    for k in range(3):
        out[:, k] = np.interp(t, s, c.points[:, k])
    return out, t


def _nearest(src: np.ndarray, dst: np.ndarray):
    d, i = cKDTree(dst).query(src, k=1)
    return d, i


@dataclass(frozen=True)
class MetricsReport:
    c2c_mm: float
    pred_to_gt_mm: float
    gt_to_pred_mm: float
    max_len_no_error_mm: float | None = None
    params: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [
            ("C2C distance (mm)", self.c2c_mm),
            ("  pred -> GT (mm)", self.pred_to_gt_mm),
            ("  GT -> pred (mm)", self.gt_to_pred_mm),
        ]
        if self.max_len_no_error_mm is not None:
            rows.append(("Max. len. w/o error (mm)", self.max_len_no_error_mm))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k:<{width}}  {v:10.3f}" for k, v in rows)


def curve_to_curve_distance(pred: Curve, gt: Curve, step_mm: float | None = 1.0) -> MetricsReport:
    """Mean of the two directed mean nearest-point distances.

    Both curves are resampled to ``step_mm`` first; pass ``None`` to compare
    the given vertices directly.
    """
    p = resample_curve(pred, step_mm) if step_mm else pred.points
    g = resample_curve(gt, step_mm) if step_mm else gt.points
    d_pg, _ = _nearest(p, g)
    d_gp, _ = _nearest(g, p)
    a, b = float(d_pg.mean()), float(d_gp.mean())
    return MetricsReport((a + b) / 2.0, a, b)


def _error_free_span(coord: np.ndarray, ok: np.ndarray, jump_tol: float) -> float:
    best = 0.0
    lo = hi = None
    prev = None
    for c, good in zip(coord, ok):
        if not good:
            lo = hi = prev = None
            continue
        if prev is not None and abs(c - prev) > jump_tol:
            lo = hi = None
        lo = c if lo is None else min(lo, c)
        hi = c if hi is None else max(hi, c)
        best = max(best, hi - lo)
        prev = c
    return best


def max_length_without_error(
    pred: Curve,
    gt: Curve,
    jump_tol_mm: float = 20.0,
    dist_tol_mm: float = 10.0,
    step_mm: float = 1.0,
) -> float:
    """Longest GT arc-length span followed by ``pred`` without an error.

    Each predicted point is mapped to the arc-length coordinate of its nearest
    GT point. An error is a jump of more than ``jump_tol_mm`` in that
    coordinate between consecutive predicted points, or a point farther than
    ``dist_tol_mm`` from the GT. Both orientations of ``pred`` are scanned.
    """
    p = resample_curve(pred, step_mm)
    g, s = _resample(gt, step_mm)
    d, i = _nearest(p, g)
    coord = s[i]
    ok = d <= dist_tol_mm
    fwd = _error_free_span(coord, ok, jump_tol_mm)
    bwd = _error_free_span(coord[::-1], ok[::-1], jump_tol_mm)
    return float(max(fwd, bwd))


def evaluate(pred: Curve, gt: Curve, jump_tol_mm=20.0, dist_tol_mm=10.0, step_mm=1.0) -> MetricsReport:
    r = curve_to_curve_distance(pred, gt, step_mm)
    ml = max_length_without_error(pred, gt, jump_tol_mm, dist_tol_mm, step_mm)
    params = {"jump_tol_mm": jump_tol_mm, "dist_tol_mm": dist_tol_mm, "resample_step_mm": step_mm}
    return MetricsReport(r.c2c_mm, r.pred_to_gt_mm, r.gt_to_pred_mm, ml, params)


def read_curve_csv(path) -> Curve:
    """Read ``x_mm,y_mm,z_mm[,...]`` rows (header optional)."""
    pts = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            try:
                xyz = [float(v) for v in row[:3]]
            except ValueError:
                if k == 0 and not pts:
                    continue
                raise ValueError(f"{path}: malformed row {k + 1}: {row}")
            if len(xyz) != 3:
                raise ValueError(f"{path}: row {k + 1} has fewer than 3 columns")
            pts.append(xyz)
    return Curve(np.asarray(pts))


def write_curve_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_mm", "y_mm", "z_mm"])
        for p in np.asarray(points, float):
            w.writerow([f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}"])
