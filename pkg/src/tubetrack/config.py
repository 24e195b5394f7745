"""Pipeline configuration: one namespace per stage, serialisable as flat JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

MODES = ("sp", "tsp", "tsp+cyl")


@dataclass
class VolumeConfig:
    spacing_mm: float = 2.0
    crop_z: list | None = None


@dataclass
class FilterConfig:
    # Gaussian scales in voxels; multiplied by the spacing before filtering.
    scales_vox: list = field(default_factory=lambda: [1.0, 1.5, 2.0])
    dark_walls: bool = True
    binarize_threshold: float = 0.5


@dataclass
class SupervoxelConfig:
    target_volume_mm3: float = 216.0
    compactness: float = 0.01
    n_iter: int = 10


@dataclass
class GraphConfig:
    lam: float = 1.0


@dataclass
class SamplingConfig:
    theta_v_mm: float = 3.0
    theta_d_mm: float = 6.0


@dataclass
class CylinderConfig:
    patch_mm: float = 36.0
    height_mm: float = 18.0
    iterations: int = 50_000
    inlier_tol_mm: float = 1.0
    radius_min_mm: float = 7.04
    radius_max_mm: float = 15.28
    min_support: int = 30


@dataclass
class TspConfig:
    delta_mm: float = 50.0
    improve: bool = True


@dataclass
class MetricsConfig:
    jump_tol_mm: float = 20.0
    dist_tol_mm: float = 10.0
    resample_step_mm: float = 1.0


@dataclass
class PipelineConfig:
    volume: VolumeConfig = field(default_factory=VolumeConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    supervoxel: SupervoxelConfig = field(default_factory=SupervoxelConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    cylinders: CylinderConfig = field(default_factory=CylinderConfig)
    tsp: TspConfig = field(default_factory=TspConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    mode: str = "tsp+cyl"
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        positive = [
            ("volume.spacing_mm", self.volume.spacing_mm),
            ("supervoxel.target_volume_mm3", self.supervoxel.target_volume_mm3),
            ("supervoxel.compactness", self.supervoxel.compactness),
            ("sampling.theta_v_mm", self.sampling.theta_v_mm),
            ("sampling.theta_d_mm", self.sampling.theta_d_mm),
            ("cylinders.patch_mm", self.cylinders.patch_mm),
            ("cylinders.height_mm", self.cylinders.height_mm),
            ("cylinders.iterations", self.cylinders.iterations),
            ("cylinders.inlier_tol_mm", self.cylinders.inlier_tol_mm),
            ("tsp.delta_mm", self.tsp.delta_mm),
            ("metrics.jump_tol_mm", self.metrics.jump_tol_mm),
            ("metrics.dist_tol_mm", self.metrics.dist_tol_mm),
            ("threads", self.threads),
        ]
        for name, val in positive:
            if not val > 0:
                raise ValueError(f"{name} must be positive, got {val}")
        if self.graph.lam < 0:
            raise ValueError("graph.lam must be >= 0")
        if not 0 < self.filters.binarize_threshold < 1:
            raise ValueError("filters.binarize_threshold must lie in (0, 1)")
        if not self.filters.scales_vox or min(self.filters.scales_vox) <= 0:
            raise ValueError("filters.scales_vox must be non-empty and positive")
        if not 0 < self.cylinders.radius_min_mm <= self.cylinders.radius_max_mm:
            raise ValueError("bad cylinder radius range")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        cfg = cls()
        cfg.update(d)
        return cfg

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def update(self, d: dict) -> None:
        for key, val in d.items():
            if key not in {f.name for f in fields(self)}:
                raise KeyError(f"unknown config section {key!r}")
            cur = getattr(self, key)
            if is_dataclass(cur):
                if not isinstance(val, dict):
                    raise TypeError(f"config section {key!r} must be an object")
                names = {f.name for f in fields(cur)}
                for k, v in val.items():
                    if k not in names:
                        raise KeyError(f"unknown config key {key}.{k}")
                    setattr(cur, k, v)
            else:
                setattr(self, key, val)

    def set_path(self, dotted: str, value) -> None:
        """Set ``section.key`` (or a top-level key) from a string or value."""
        parts = dotted.split(".")
        if len(parts) == 1:
            target, name = self, parts[0]
        elif len(parts) == 2:
            target, name = getattr(self, parts[0]), parts[1]
        else:
            raise KeyError(dotted)
        if name not in {f.name for f in fields(target)}:
            raise KeyError(f"unknown config key {dotted}")
        if isinstance(value, str):
            try:
                value = json.loads(value)
            except json.JSONDecodeError:
                pass
        setattr(target, name, value)
