"""Pipeline configuration and its flat key=value text form."""

from __future__ import annotations

from dataclasses import dataclass, fields

from mvsweep.costvol import DepthPlanes
from mvsweep.sampling import VoxelGridSpec


@dataclass
class PipelineConfig:
    """Every tunable of the end-to-end pipeline.

    The sweep defaults follow the standard working point: 12 uniform planes
    over [0.2, 5] m, 3 depth proposals, a +-0.2 m match window, 2 source
    views per reference, a 40x40x16 voxel grid at 0.16 x 0.16 x 0.2 m pitch,
    and 3 nearby sources per novel view.  The softmax temperature default is
    calibrated to the 6-channel descriptor's variance scale.
    """

    num_planes: int = 12
    depth_min: float = 0.2
    depth_max: float = 5.0
    top_k: int = 3
    match_window: float = 0.2
    temperature: float = 5e-4
    cost_penalty: float = 10.0
    source_views: int = 2
    grid_dims: tuple[int, int, int] = (40, 40, 16)
    grid_pitch: tuple[float, float, float] = (0.16, 0.16, 0.2)
    grid_origin: tuple[float, float, float] = (-3.2, -3.2, 0.0)
    splat_footprint: float = 1.0
    refine_steps: int = 30
    refine_step_size: float = 6.0
    refine_novel_views: int = 2
    novel_source_views: int = 3
    box_threshold: float = 0.5
    min_component: int = 4

    def __post_init__(self):
        if not (1 <= self.top_k <= self.num_planes):
            raise ValueError("top_k must lie in [1, num_planes]")
        if not 0.0 < self.depth_min < self.depth_max:
            raise ValueError("need 0 < depth_min < depth_max")
        for name in ("match_window", "temperature", "cost_penalty", "splat_footprint",
                     "refine_step_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("source_views", "refine_steps", "refine_novel_views",
                     "novel_source_views", "min_component"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.box_threshold <= 1.0:
            raise ValueError("box_threshold must lie in (0, 1]")
        self.grid_dims = tuple(int(v) for v in self.grid_dims)
        self.grid_pitch = tuple(float(v) for v in self.grid_pitch)
        self.grid_origin = tuple(float(v) for v in self.grid_origin)

    def planes(self) -> DepthPlanes:
        return DepthPlanes.uniform(self.num_planes, self.depth_min, self.depth_max)

    def grid_spec(self) -> VoxelGridSpec:
        return VoxelGridSpec(self.grid_dims, self.grid_origin, self.grid_pitch)


_INT_FIELDS = {"num_planes", "top_k", "source_views", "refine_steps",
               "refine_novel_views", "novel_source_views", "min_component"}
_TUPLE_FIELDS = {"grid_dims": int, "grid_pitch": float, "grid_origin": float}


def config_to_text(config: PipelineConfig) -> str:
    """Flat key=value listing, one field per line, full float precision."""
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if f.name in _TUPLE_FIELDS:
            lines.append(f"{f.name}={','.join(repr(x) for x in v)}")
        else:
            lines.append(f"{f.name}={v!r}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> PipelineConfig:
    """Parse a key=value listing; unknown keys are errors."""
    known = {f.name for f in fields(PipelineConfig)}
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in known:
            raise ValueError(f"line {ln}: unknown config key {key!r}")
        if key in _TUPLE_FIELDS:
            cast = _TUPLE_FIELDS[key]
            values[key] = tuple(cast(float(p)) for p in val.split(","))
        elif key in _INT_FIELDS:
            values[key] = int(val)
        else:
            values[key] = float(val)
    return PipelineConfig(**values)


def save_config(path, config: PipelineConfig) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_text(config))


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return config_from_text(fh.read())
