"""Bit-exact file formats: camera listings, PPM images, MVSR float rasters,
MVSV voxel grids, MVSG splat sets, and structured text for scenes, boxes and
metrics.

Text floats are written with repr so parsing reproduces the exact double;
binary formats are little-endian with fixed headers.  Every format round
trips losslessly (PPM after its one-time 8-bit quantization).
"""

from __future__ import annotations

import struct

import numpy as np

from mvsweep.camera import CameraView, Intrinsics, Pose
from mvsweep.sampling import VoxelGrid, VoxelGridSpec
from mvsweep.scenegen import SceneSpec, TexturedBox
from mvsweep.splat import GaussianSplatSet

MAGIC_RASTER = b"MVSR"
MAGIC_VOLUME = b"MVSV"
MAGIC_SPLATS = b"MVSG"


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------


def cameras_to_text(views: list[CameraView]) -> str:
    """Per view: a line `fx fy cx cy width height` followed by the row-major
    3x4 [R|t] on the next line."""
    lines = [str(len(views))]
    for v in views:
        k = v.intrinsics
        lines.append(
            " ".join([_fmt(k.fx), _fmt(k.fy), _fmt(k.cx), _fmt(k.cy), str(v.width), str(v.height)])
        )
        rt = np.hstack([v.pose.rotation, v.pose.translation[:, None]])
        lines.append(" ".join(_fmt(x) for x in rt.reshape(-1)))
    return "\n".join(lines) + "\n"


def cameras_from_text(text: str) -> list[CameraView]:
    tokens = text.split("\n")
    rows = [t for t in tokens if t.strip()]
    n = int(rows[0])
    if len(rows) != 1 + 2 * n:
        raise ValueError(f"camera listing: expected {1 + 2 * n} lines, got {len(rows)}")
    views = []
    for i in range(n):
        head = rows[1 + 2 * i].split()
        fx, fy, cx, cy = (float(x) for x in head[:4])
        width, height = int(head[4]), int(head[5])
        vals = [float(x) for x in rows[2 + 2 * i].split()]
        if len(vals) != 12:
            raise ValueError("camera listing: [R|t] must have 12 values")
        rt = np.array(vals).reshape(3, 4)
        views.append(
            CameraView(Intrinsics(fx, fy, cx, cy), Pose(rt[:, :3], rt[:, 3]), width, height)
        )
    return views


def save_cameras(path, views) -> None:
    with open(path, "w") as fh:
        fh.write(cameras_to_text(views))


def load_cameras(path) -> list[CameraView]:
    with open(path) as fh:
        return cameras_from_text(fh.read())


# ---------------------------------------------------------------------------
# PPM images (P6, 8-bit)
# ---------------------------------------------------------------------------


def save_ppm(path, image: np.ndarray) -> None:
    """Float image in [0, 1] quantized to 8 bits; (H, W, 3)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected (H, W, 3) image")
    data = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def load_ppm(path) -> np.ndarray:
    """Returns float64 in [0, 1]."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a P6 PPM")
        dims = fh.readline().split()
        while dims and dims[0].startswith(b"#"):
            dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit PPM supported")
        raw = fh.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# MVSR float rasters (depth maps, probability volumes, feature grids)
# ---------------------------------------------------------------------------


def save_raster(path, data: np.ndarray) -> None:
    """(rows, cols) or (rows, cols, channels) float data as little-endian f32."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError("raster must be 2D or 3D")
    rows, cols, ch = arr.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC_RASTER)
        fh.write(struct.pack("<III", rows, cols, ch))
        fh.write(arr.astype("<f4").tobytes())


def load_raster(path) -> np.ndarray:
    """Returns (rows, cols, channels) float64; single-channel stays 3D."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_RASTER:
            raise ValueError(f"{path}: bad raster magic {magic!r}")
        rows, cols, ch = struct.unpack("<III", fh.read(12))
        raw = fh.read(rows * cols * ch * 4)
    if len(raw) != rows * cols * ch * 4:
        raise ValueError(f"{path}: truncated raster data")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols, ch).astype(np.float64)


# ---------------------------------------------------------------------------
# MVSV voxel grids
# ---------------------------------------------------------------------------


def save_volume(path, grid: VoxelGrid) -> None:
    """Header: dims (nx, ny, nz, C) as u32, origin and pitch as f32; then per
    voxel (C-order) the aggregated feature followed by the surface score."""
    nx, ny, nz = grid.spec.dims
    c = grid.feature_mean.shape[-1]
    payload = np.concatenate([grid.feature_mean, grid.score[..., None]], axis=-1)
    with open(path, "wb") as fh:
        fh.write(MAGIC_VOLUME)
        fh.write(struct.pack("<IIII", nx, ny, nz, c))
        fh.write(struct.pack("<3f", *grid.spec.origin))
        fh.write(struct.pack("<3f", *grid.spec.pitch))
        fh.write(payload.astype("<f4").tobytes())


def load_volume(path) -> VoxelGrid:
    """The stored format carries no per-voxel view counts, so valid_count is
    None on restored grids."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_VOLUME:
            raise ValueError(f"{path}: bad volume magic {magic!r}")
        nx, ny, nz, c = struct.unpack("<IIII", fh.read(16))
        origin = struct.unpack("<3f", fh.read(12))
        pitch = struct.unpack("<3f", fh.read(12))
        raw = fh.read(nx * ny * nz * (c + 1) * 4)
    if len(raw) != nx * ny * nz * (c + 1) * 4:
        raise ValueError(f"{path}: truncated volume data")
    payload = np.frombuffer(raw, dtype="<f4").reshape(nx, ny, nz, c + 1).astype(np.float64)
    spec = VoxelGridSpec((nx, ny, nz), origin, pitch)
    return VoxelGrid(
        spec=spec, feature_mean=payload[..., :c], score=payload[..., c], valid_count=None
    )


# ---------------------------------------------------------------------------
# MVSG splat sets
# ---------------------------------------------------------------------------

_SPLAT_DTYPE = np.dtype(
    [
        ("mean", "<f8", 3),
        ("alpha", "<f8"),
        ("quat", "<f8", 4),
        ("scale", "<f8", 3),
        ("color", "<f8", 3),
        ("view", "<u4"),
        ("row", "<u4"),
        ("col", "<u4"),
    ]
)


def save_splats(path, splats: GaussianSplatSet) -> None:
    n = len(splats)
    rec = np.empty(n, dtype=_SPLAT_DTYPE)
    rec["mean"] = splats.means
    rec["alpha"] = splats.opacities
    rec["quat"] = splats.quaternions
    rec["scale"] = splats.scales
    rec["color"] = splats.colors
    rec["view"] = splats.source_view
    rec["row"] = splats.pixel_rows
    rec["col"] = splats.pixel_cols
    with open(path, "wb") as fh:
        fh.write(MAGIC_SPLATS)
        fh.write(struct.pack("<I", n))
        fh.write(rec.tobytes())


def load_splats(path) -> GaussianSplatSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_SPLATS:
            raise ValueError(f"{path}: bad splat magic {magic!r}")
        (n,) = struct.unpack("<I", fh.read(4))
        raw = fh.read(n * _SPLAT_DTYPE.itemsize)
    if len(raw) != n * _SPLAT_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated splat data")
    rec = np.frombuffer(raw, dtype=_SPLAT_DTYPE)
    return GaussianSplatSet(
        means=rec["mean"].astype(np.float64),
        opacities=rec["alpha"].astype(np.float64),
        quaternions=rec["quat"].astype(np.float64),
        scales=rec["scale"].astype(np.float64),
        colors=rec["color"].astype(np.float64),
        source_view=rec["view"].astype(np.int64),
        pixel_rows=rec["row"].astype(np.int64),
        pixel_cols=rec["col"].astype(np.int64),
    )


# ---------------------------------------------------------------------------
# scene specs, boxes, metrics (structured text)
# ---------------------------------------------------------------------------


def scene_to_text(scene: SceneSpec) -> str:
    lines = [
        "room " + " ".join(_fmt(x) for x in np.r_[scene.room_lo, scene.room_hi]),
        "walls " + ("1" if scene.walls else "0"),
        "wall_seed " + str(scene.wall_seed),
        "background " + " ".join(_fmt(x) for x in scene.background),
    ]
    for b in scene.boxes:
        lines.append(
            "box "
            + " ".join(_fmt(x) for x in np.r_[b.lo, b.hi])
            + f" {b.texture_seed} "
            + " ".join(_fmt(x) for x in b.color)
        )
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> SceneSpec:
    room = walls = wall_seed = background = None
    boxes = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        vals = rest.split()
        if kind == "room":
            room = [float(x) for x in vals]
        elif kind == "walls":
            walls = vals[0] == "1"
        elif kind == "wall_seed":
            wall_seed = int(vals[0])
        elif kind == "background":
            background = [float(x) for x in vals]
        elif kind == "box":
            boxes.append(
                TexturedBox(
                    lo=np.array([float(x) for x in vals[:3]]),
                    hi=np.array([float(x) for x in vals[3:6]]),
                    texture_seed=int(vals[6]),
                    color=np.array([float(x) for x in vals[7:10]]),
                )
            )
        else:
            raise ValueError(f"scene listing: unknown record {kind!r}")
    if room is None or walls is None or wall_seed is None or background is None:
        raise ValueError("scene listing: missing room/walls/wall_seed/background")
    return SceneSpec(
        room_lo=np.array(room[:3]),
        room_hi=np.array(room[3:]),
        boxes=tuple(boxes),
        background=np.array(background),
        wall_seed=wall_seed,
        walls=walls,
    )


def save_scene(path, scene: SceneSpec) -> None:
    with open(path, "w") as fh:
        fh.write(scene_to_text(scene))


def load_scene_spec(path) -> SceneSpec:
    with open(path) as fh:
        return scene_from_text(fh.read())


def boxes_to_text(boxes) -> str:
    """One record per line: center xyz, size whl, yaw, score."""
    lines = []
    for b in boxes:
        lines.append(
            " ".join(
                [_fmt(x) for x in b.center]
                + [_fmt(x) for x in b.size]
                + [_fmt(b.yaw), _fmt(b.score)]
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def boxes_from_text(text: str):
    from mvsweep.harness.boxes import Box3D

    out = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        vals = [float(x) for x in line.split()]
        if len(vals) != 8:
            raise ValueError("box record must have 8 fields")
        out.append(
            Box3D(center=np.array(vals[:3]), size=np.array(vals[3:6]), yaw=vals[6], score=vals[7])
        )
    return out


def save_boxes(path, boxes) -> None:
    with open(path, "w") as fh:
        fh.write(boxes_to_text(boxes))


def load_boxes(path):
    with open(path) as fh:
        return boxes_from_text(fh.read())


def metrics_to_text(metrics: dict[str, float]) -> str:
    """One `name value` record per line, insertion-ordered."""
    return "".join(f"{k} {_fmt(v)}\n" for k, v in metrics.items())


def metrics_from_text(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        key, _, val = line.partition(" ")
        out[key] = float(val)
    return out


def save_metrics(path, metrics: dict[str, float]) -> None:
    with open(path, "w") as fh:
        fh.write(metrics_to_text(metrics))


def load_metrics(path) -> dict[str, float]:
    with open(path) as fh:
        return metrics_from_text(fh.read())
