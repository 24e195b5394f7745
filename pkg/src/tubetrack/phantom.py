"""Synthetic tube phantoms with known centrelines.

Voxels are classified by their distance ``d`` to the centreline: lumen for
``d < r - w``, wall for ``r - w <= d <= r``, background otherwise. The lumen is
brighter than the wall so walls are valleys, and where two non-adjacent parts
of the tube touch their walls form a double sheet between two lumens.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import interpolate
from scipy.spatial import cKDTree

from .metrics import Curve, write_curve_csv
from .volume_io import Volume, save_volume

LUMEN, WALL = 1, 2
KINDS = ("straight", "helix", "random-spline-with-contacts", "polyline")


class PhantomSpecError(ValueError):
    pass


@dataclass
class PhantomSpec:
    volume_dims: tuple[int, int, int] = (128, 128, 128)
    spacing_mm: float = 2.0
    kind: str = "straight"
    control_points_mm: list | None = None
    tube_radius_mm: float = 10.0
    wall_thickness_mm: float = 3.0
    lumen_intensity: float = 200.0
    wall_intensity: float = 50.0
    background_intensity: float = 100.0
    noise_sigma: float = 5.0
    seed: int = 0
    # straight
    length_mm: float = 160.0
    # helix / coil
    helix_radius_mm: float = 30.0
    pitch_mm: float = 50.0
    turns: float = 2.0
    # random spline
    target_contacts: int = 1
    max_retries: int = 50
    # 1 keeps contact walls at wall intensity; 0 makes them lumen-bright.
    contact_wall_visibility: float = 1.0
    sample_step_mm: float = 0.25

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise PhantomSpecError(f"unknown phantom fields: {sorted(unknown)}")
        if "volume_dims" in known:
            known["volume_dims"] = tuple(int(n) for n in known["volume_dims"])
        return cls(**known)

    @property
    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.volume_dims, float) * self.spacing_mm

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise PhantomSpecError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if not self.tube_radius_mm > self.wall_thickness_mm > 0:
            raise PhantomSpecError("need tube_radius_mm > wall_thickness_mm > 0")
        if self.spacing_mm <= 0 or min(self.volume_dims) < 1:
            raise PhantomSpecError("bad grid")
        if not 0.0 <= self.contact_wall_visibility <= 1.0:
            raise PhantomSpecError("contact_wall_visibility must lie in [0, 1]")


@dataclass
class Phantom:
    volume: Volume
    segmentation: Volume
    gt_path: Curve
    start_mm: np.ndarray
    end_mm: np.ndarray
    tissue: Volume
    contacts_mm: list = field(default_factory=list)
    spec: PhantomSpec | None = None

    def __iter__(self):
        # Allows ``vol, seg, gt, start, end = generate_phantom(spec)``.
        return iter((self.volume, self.segmentation, self.gt_path, self.start_mm, self.end_mm))


# ---------------------------------------------------------------------------
# Centrelines

def _densify(points: np.ndarray, step: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, s[-1], max(2, int(np.ceil(s[-1] / step)) + 1))
    return np.stack([np.interp(t, s, points[:, k]) for k in range(3)], axis=1)


def _straight(spec: PhantomSpec) -> np.ndarray:
    c = spec.extent_mm / 2
    half = spec.length_mm / 2
    return np.array([c - [half, 0, 0], c + [half, 0, 0]])


def _helix(spec: PhantomSpec, n_per_turn: int = 720) -> np.ndarray:
    c = spec.extent_mm / 2
    th = np.linspace(0, 2 * np.pi * spec.turns, max(2, int(n_per_turn * spec.turns)))
    z = spec.pitch_mm * th / (2 * np.pi)
    z -= z.mean()
    R = spec.helix_radius_mm
    return np.stack([c[0] + R * np.cos(th), c[1] + R * np.sin(th), c[2] + z], axis=1)


def _dent_profile(th: np.ndarray, center: float, plateau: float, taper: float) -> np.ndarray:
    """1 on ``|th - center| <= plateau / 2`` with raised-cosine shoulders of width ``taper``."""
    x = np.abs(th - center) - plateau / 2
    w = np.where(x <= 0, 1.0, 0.5 * (1 + np.cos(np.pi * np.clip(x / taper, 0, 1))))
    return w


def _random_coil(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Loose coil with random radius and tilt, dented down onto the turn below
    at ``target_contacts`` places so that adjacent turns touch there.

    A dent lowers its turn and everything above it over an angular window,
    so the gap to the turn below closes to under one voxel while all other
    gaps keep their loose spacing.
    """
    r, s = spec.tube_radius_mm, spec.spacing_mm
    R = rng.uniform(2.6 * r, 3.2 * r)
    turns = spec.turns
    n_dent = max(0, int(spec.target_contacts))
    if n_dent > int(np.floor(turns)) - 1:
        raise PhantomSpecError(f"{turns} turns cannot hold {n_dent} contacts; need turns >= contacts + 1")

    def pitch_for(sep):
        # Perpendicular spacing of adjacent turns is pitch * cos(helix angle).
        p = sep
        for _ in range(5):
            p = sep / np.cos(np.arctan(p / (2 * np.pi * R)))
        return p

    p_loose = pitch_for(2 * r + rng.uniform(2.0, 4.0) * s)
    th = np.linspace(0, 2 * np.pi * turns, int(720 * turns))
    z = p_loose * th / (2 * np.pi)
    for t in rng.permutation(np.arange(1, int(np.floor(turns))))[:n_dent]:
        gap = rng.uniform(0.1, 0.9) * s
        depth = p_loose - pitch_for(2 * r + gap)
        plateau = np.radians(rng.uniform(30, 60))
        taper = np.radians(rng.uniform(80, 100))
        lo = 2 * np.pi * t + plateau / 2 + taper
        hi = min(2 * np.pi * (t + 1), 2 * np.pi * turns - plateau / 2 - taper)
        center = rng.uniform(lo, max(lo, hi))
        # Repeating the dent on every later turn closes only this one gap.
        for m in range(int(np.ceil(turns)) + 1):
            z = z - depth * _dent_profile(th, center + 2 * np.pi * m, plateau, taper)
    phase = rng.uniform(0, 2 * np.pi)
    pts = np.stack([R * np.cos(th + phase), R * np.sin(th + phase), z - z.mean()], axis=1)
    tilt = rng.uniform(0, np.radians(25))
    az = rng.uniform(0, 2 * np.pi)
    k = np.array([np.cos(az), np.sin(az), 0.0])
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    rot = np.eye(3) + np.sin(tilt) * K + (1 - np.cos(tilt)) * K @ K
    pts = pts @ rot.T
    # Interpolating spline through every 10 degrees of the coil.
    ctrl = pts[::20]
    tck, _ = interpolate.splprep(ctrl.T, s=0, k=3)
    u = np.linspace(0, 1, len(pts))
    curve = np.stack(interpolate.splev(u, tck), axis=1)
    return curve + spec.extent_mm / 2


def _centreline(spec: PhantomSpec, rng) -> np.ndarray:
    if spec.kind == "straight":
        pts = _straight(spec)
    elif spec.kind == "helix":
        pts = _helix(spec)
    elif spec.kind == "polyline":
        if spec.control_points_mm is None or len(spec.control_points_mm) < 2:
            raise PhantomSpecError("polyline phantom needs >= 2 control points")
        pts = np.asarray(spec.control_points_mm, float)
    else:
        pts = _random_coil(spec, rng)
    return _densify(pts, spec.sample_step_mm)


def _turning_radius(c: np.ndarray, window_mm: float, step: float) -> float:
    """Smallest circumradius over point triples ``window_mm`` apart along the curve."""
    k = max(1, int(round(window_mm / step)))
    if len(c) < 2 * k + 1:
        return np.inf
    a, b, d = c[:-2 * k], c[k:-k], c[2 * k:]
    ab = np.linalg.norm(b - a, axis=1)
    bd = np.linalg.norm(d - b, axis=1)
    ad = np.linalg.norm(d - a, axis=1)
    area2 = np.linalg.norm(np.cross(b - a, d - a), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = ab * bd * ad / (2 * area2)
    R = R[np.isfinite(R)]
    return float(R.min()) if R.size else np.inf


def find_contacts(c: np.ndarray, spec: PhantomSpec, step: float):
    """Non-local approaches of the centreline.

    Returns ``(min_nonlocal_distance, contact_midpoints)`` where contacts are
    runs of sample pairs whose tube surfaces come within one voxel.
    """
    r = spec.tube_radius_mm
    reach = 2 * r + spec.spacing_mm
    tree = cKDTree(c)
    pairs = tree.query_pairs(reach, output_type="ndarray")
    min_sep = 4 * r / step
    if len(pairs):
        pairs = pairs[np.abs(pairs[:, 0] - pairs[:, 1]) > min_sep]
    if not len(pairs):
        return np.inf, []
    d = np.linalg.norm(c[pairs[:, 0]] - c[pairs[:, 1]], axis=1)
    # Group pairs into contact regions by the first index (runs along the curve).
    order = np.argsort(pairs[:, 0], kind="stable")
    pairs, d = pairs[order], d[order]
    regions, cur = [], [0]
    for k in range(1, len(pairs)):
        if pairs[k, 0] - pairs[cur[-1], 0] <= 2 * r / step:
            cur.append(k)
        else:
            regions.append(cur)
            cur = [k]
    regions.append(cur)
    mids = []
    for reg in regions:
        j = reg[int(np.argmin(d[reg]))]
        mids.append(((c[pairs[j, 0]] + c[pairs[j, 1]]) / 2).tolist())
    return float(d.min()), mids


def _check_geometry(c: np.ndarray, spec: PhantomSpec, step: float):
    r = spec.tube_radius_mm
    ext = spec.extent_mm
    # Voxel centres span [0, (n-1)*s]; keep the whole tube on the grid.
    hi = (np.asarray(spec.volume_dims) - 1) * spec.spacing_mm
    if np.any(c - r < 0) or np.any(c + r > hi):
        raise PhantomSpecError(f"centreline leaves the {ext.tolist()} mm volume with radius clearance {r}")
    bend = _turning_radius(c, min(2 * r, 0.5 * Curve(c).length), step)
    if bend < 2 * r * 0.999:
        raise PhantomSpecError(f"minimum bend radius {bend:.2f} mm < 2 x tube radius")
    dmin, mids = find_contacts(c, spec, step)
    if dmin < 2 * r - 1e-6:
        raise PhantomSpecError(f"tube overlaps itself (non-local centreline distance {dmin:.2f} mm)")
    return mids


def generate_phantom(spec: PhantomSpec) -> Phantom:
    """Render a phantom; raises :class:`PhantomSpecError` on bad geometry."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    step = spec.sample_step_mm
    if spec.kind == "random-spline-with-contacts":
        last = None
        for _ in range(max(1, spec.max_retries)):
            try:
                c = _centreline(spec, rng)
                mids = _check_geometry(c, spec, step)
            except PhantomSpecError as exc:
                last = exc
                continue
            if len(mids) >= spec.target_contacts:
                break
            last = PhantomSpecError(f"only {len(mids)} contacts, wanted {spec.target_contacts}")
        else:
            raise PhantomSpecError(f"no valid random spline after {spec.max_retries} tries: {last}")
    else:
        c = _centreline(spec, rng)
        mids = _check_geometry(c, spec, step)
    return _render(spec, c, mids, rng)


def _render(spec: PhantomSpec, c: np.ndarray, contacts, rng) -> Phantom:
    r, w, s = spec.tube_radius_mm, spec.wall_thickness_mm, spec.spacing_mm
    dims = tuple(int(n) for n in spec.volume_dims)
    tree = cKDTree(c)
    lo = np.maximum(np.floor((c.min(axis=0) - r - s) / s).astype(int), 0)
    hi = np.minimum(np.ceil((c.max(axis=0) + r + s) / s).astype(int) + 1, dims)
    grid = np.stack(np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)], indexing="ij"), -1)
    pts = grid.reshape(-1, 3) * s
    d, idx = tree.query(pts, k=1, distance_upper_bound=r + s)
    dist = np.full(dims, np.inf)
    dist[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = d.reshape(grid.shape[:3])
    tissue = np.zeros(dims, dtype=np.uint8)
    tissue[dist <= r] = WALL
    tissue[dist < r - w] = LUMEN

    img = np.full(dims, spec.background_intensity, dtype=np.float64)
    img[tissue == WALL] = spec.wall_intensity
    img[tissue == LUMEN] = spec.lumen_intensity
    if spec.contact_wall_visibility < 1.0 and contacts:
        contact_wall = _contact_wall_voxels(c, tissue, spec, lo, hi, idx.reshape(grid.shape[:3]), dist)
        vis = spec.contact_wall_visibility
        img[contact_wall] = vis * spec.wall_intensity + (1 - vis) * spec.lumen_intensity
    if spec.noise_sigma > 0:
        img += rng.normal(0.0, spec.noise_sigma, dims)

    vol = Volume(img.astype(np.float32), (s, s, s))
    seg = vol.with_data(tissue > 0)
    return Phantom(
        volume=vol,
        segmentation=seg,
        gt_path=Curve(c),
        start_mm=c[0].copy(),
        end_mm=c[-1].copy(),
        tissue=vol.with_data(tissue),
        contacts_mm=contacts,
        spec=spec,
    )


def _contact_wall_voxels(c, tissue, spec, lo, hi, nearest_idx, dist):
    """Non-lumen voxels within the shells of two non-local parts of the tube.

    This covers both touching walls and the thin background gap between them.
    """
    r, s = spec.tube_radius_mm, spec.spacing_mm
    step = spec.sample_step_mm
    out = np.zeros(tissue.shape, dtype=bool)
    cand = np.argwhere((tissue != LUMEN) & (dist <= r + s))
    if not len(cand):
        return out
    near = nearest_idx[tuple((cand - lo).T)]
    tree = cKDTree(c)
    hits = tree.query_ball_point(cand * s, r + s)
    min_sep = 4 * r / step
    for k, lst in enumerate(hits):
        if lst and np.any(np.abs(np.asarray(lst) - near[k]) > min_sep):
            out[tuple(cand[k])] = True
    return out


def save_phantom(ph: Phantom, out_dir) -> dict:
    """Write volume, segmentation, GT path and a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(ph.volume, out / "volume.nii.gz")
    save_volume(ph.segmentation.with_data(ph.segmentation.data.astype(np.uint8)), out / "segmentation.nii.gz")
    write_curve_csv(ph.gt_path.points, out / "gt_path.csv")
    manifest = {
        "spec": asdict(ph.spec) if ph.spec is not None else None,
        "start_mm": ph.start_mm.tolist(),
        "end_mm": ph.end_mm.tolist(),
        "gt_length_mm": ph.gt_path.length,
        "contacts_mm": ph.contacts_mm,
        "files": {
            "volume": "volume.nii.gz",
            "segmentation": "segmentation.nii.gz",
            "gt_path": "gt_path.csv",
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
