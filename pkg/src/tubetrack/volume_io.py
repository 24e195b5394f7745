"""Volume container and file I/O (NIfTI-1 and raw float32 + JSON sidecar).

Arrays are stored with shape ``(nx, ny, nz)`` and indexed ``data[x, y, z]``.
On disk the raw format is x-fastest, i.e. Fortran order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

SUPPORTED_NIFTI_DTYPES = (np.uint8, np.int16, np.float32)


class VolumeIOError(ValueError):
    """Raised for unreadable or malformed volume files."""


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid with physical metadata.

    ``spacing`` is kept per axis so that anisotropic inputs survive loading;
    the rest of the pipeline works on isotropic grids and uses
    :attr:`spacing_mm`.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be 3D and non-empty, got shape {data.shape}")
        sp = self.spacing
        if np.isscalar(sp):
            sp = (sp, sp, sp)
        sp = tuple(float(s) for s in sp)
        if len(sp) != 3 or min(sp) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in self.origin_mm))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def is_isotropic(self) -> bool:
        return max(self.spacing) - min(self.spacing) <= 1e-9 * max(self.spacing)

    @property
    def spacing_mm(self) -> float:
        if not self.is_isotropic:
            raise ValueError(f"volume is anisotropic {self.spacing}; resample first")
        return self.spacing[0]

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same grid, new values."""
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise ValueError(f"shape mismatch {data.shape} vs {self.data.shape}")
        return replace(self, data=data)

    def same_grid(self, other: "Volume") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing)
            and np.allclose(self.origin_mm, other.origin_mm)
        )

    def index_to_mm(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=float)
        return np.asarray(self.origin_mm) + ijk * np.asarray(self.spacing)

    def mm_to_index(self, xyz) -> np.ndarray:
        """Physical coordinates to (fractional) voxel indices."""
        xyz = np.asarray(xyz, dtype=float)
        return (xyz - np.asarray(self.origin_mm)) / np.asarray(self.spacing)


# A VoxelMask is a Volume whose data is boolean; kept as an alias rather than
# a subclass so every Volume helper applies unchanged.
VoxelMask = Volume


def as_mask(v: Volume) -> Volume:
    return v.with_data(np.asarray(v.data) != 0)


# ---------------------------------------------------------------------------
# Raw + JSON sidecar

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json") if path.suffix != ".json" else path


def save_raw(v: Volume, path) -> None:
    path = Path(path)
    if not v.is_isotropic:
        raise ValueError("raw format stores a single isotropic spacing")
    data = np.asarray(v.data, dtype="<f4")
    path.write_bytes(data.tobytes(order="F"))
    meta = {"dims": list(v.dims), "spacing_mm": v.spacing_mm, "origin_mm": list(v.origin_mm)}
    _sidecar_path(path).write_text(json.dumps(meta))


def load_raw(path) -> Volume:
    path = Path(path)
    side = _sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
        dims = [int(n) for n in meta["dims"]]
        spacing = float(meta["spacing_mm"])
        origin = [float(o) for o in meta.get("origin_mm", (0.0, 0.0, 0.0))]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise VolumeIOError(f"bad raw sidecar {side}: {exc}") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeIOError(f"inconsistent dims in sidecar: {dims}")
    n = int(np.prod(dims))
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise VolumeIOError(f"cannot read {path}: {exc}") from exc
    if len(buf) != 4 * n:
        raise VolumeIOError(f"{path}: expected {4 * n} bytes for dims {dims}, found {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4").reshape(dims, order="F").astype(np.float32)
    return Volume(data, (spacing,) * 3, tuple(origin))


# ---------------------------------------------------------------------------
# NIfTI-1

def save_nifti(v: Volume, path) -> None:
    import nibabel as nib

    data = np.asarray(v.data)
    if data.dtype == bool:
        data = data.astype(np.uint8)
    elif data.dtype not in SUPPORTED_NIFTI_DTYPES:
        if np.issubdtype(data.dtype, np.integer) and data.min() >= -32768 and data.max() <= 32767:
            data = data.astype(np.int16)
        else:
            data = data.astype(np.float32)
    affine = np.diag([*v.spacing, 1.0])
    affine[:3, 3] = v.origin_mm
    img = nib.Nifti1Image(data, affine)
    img.header.set_zooms(v.spacing)
    img.header["scl_slope"] = 1.0
    img.header["scl_inter"] = 0.0
    nib.save(img, str(path))


def load_nifti(path) -> Volume:
    import nibabel as nib

    try:
        img = nib.load(str(path))
    except Exception as exc:  # nibabel raises a zoo of types
        raise VolumeIOError(f"cannot read NIfTI {path}: {exc}") from exc
    if not isinstance(img, nib.Nifti1Image):
        raise VolumeIOError(f"{path} is not NIfTI-1")
    hdr = img.header
    if hdr.get_data_dtype().type not in SUPPORTED_NIFTI_DTYPES:
        raise VolumeIOError(f"unsupported NIfTI datatype {hdr.get_data_dtype()}")
    shape = img.shape
    if len(shape) != 3:
        if len(shape) > 3 and all(s == 1 for s in shape[3:]):
            shape = shape[:3]
        else:
            raise VolumeIOError(f"expected a 3D volume, header dims {img.shape}")
    try:
        raw = np.asanyarray(img.dataobj).reshape(shape)
    except Exception as exc:
        raise VolumeIOError(f"inconsistent NIfTI data for dims {shape}: {exc}") from exc
    slope, inter = hdr.get_slope_inter()
    if slope is not None and slope != 0 and (slope != 1 or (inter or 0) != 0):
        data = raw.astype(np.float32) * np.float32(slope) + np.float32(inter or 0)
    else:
        data = np.asarray(raw)
    zooms = tuple(float(z) for z in hdr.get_zooms()[:3])
    origin = tuple(float(o) for o in img.affine[:3, 3])
    return Volume(data, zooms, origin)


def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def load_volume(path) -> Volume:
    """Load a ``.nii``/``.nii.gz`` file or a raw float32 file with JSON sidecar."""
    path = Path(path)
    if _is_nifti(path):
        return load_nifti(path)
    return load_raw(path)


def save_volume(v: Volume, path) -> None:
    path = Path(path)
    if _is_nifti(path):
        save_nifti(v, path)
    else:
        save_raw(v, path)


# ---------------------------------------------------------------------------
# Resampling and cropping

def resample_isotropic(v: Volume, target_mm: float = 2.0) -> Volume:
    """Trilinear resampling onto an isotropic grid of spacing ``target_mm``.

    Output voxel ``k`` along an axis sits at physical position
    ``origin + k * target_mm``; the origin is preserved. Samples past the last
    input voxel centre are clamped to the edge, so the output range stays
    inside the input range.
    """
    if target_mm <= 0:
        raise ValueError("target_mm must be positive")
    extent = np.asarray(v.dims) * np.asarray(v.spacing)
    out_dims = np.maximum(1, np.round(extent / target_mm).astype(int))
    if tuple(out_dims) == v.dims and np.allclose(v.spacing, target_mm):
        return Volume(np.array(v.data, copy=True), (float(target_mm),) * 3, v.origin_mm)
    grids = [np.arange(n) * target_mm / s for n, s in zip(out_dims, v.spacing)]
    coords = np.meshgrid(*grids, indexing="ij")
    src = np.asarray(v.data, dtype=np.float64)
    out = ndimage.map_coordinates(src, coords, order=1, mode="nearest")
    lo, hi = src.min(), src.max()
    out = np.clip(out, lo, hi)
    if np.issubdtype(v.data.dtype, np.floating):
        out = out.astype(v.data.dtype)
    return Volume(out, (float(target_mm),) * 3, v.origin_mm)


def crop(v: Volume, x=None, y=None, z=None) -> Volume:
    """Crop to index ranges ``(start, stop)`` per axis; ``None`` keeps the axis.

    Used for the manual z-range crop applied to scans before tracking.
    """
    slices = []
    for rng, n in zip((x, y, z), v.dims):
        if rng is None:
            slices.append(slice(0, n))
            continue
        start, stop = int(rng[0]), int(rng[1])
        start, stop = max(0, start), min(n, stop)
        if stop <= start:
            raise ValueError(f"empty crop range {rng} for axis of length {n}")
        slices.append(slice(start, stop))
    offset = np.array([s.start for s in slices], dtype=float)
    origin = tuple(np.asarray(v.origin_mm) + offset * np.asarray(v.spacing))
    return Volume(np.array(v.data[tuple(slices)]), v.spacing, origin)
