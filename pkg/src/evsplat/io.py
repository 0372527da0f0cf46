"""Dataset directory layout and binary file formats.

All binary formats are little-endian with fixed-size records and are
validated strictly on load (magic, sizes, trailing bytes, invariants).

Event file:      8-byte magic "EVGGSEVT", u16 W, u16 H, u32 count, then
                 16-byte records: u64 t_ns, u16 x, u16 y, i8 polarity,
                 3 zero pad bytes.
Frames / masks:  8-bit binary PGM (P5), values scaled to [0, 1] in memory.
Depth maps:      8-byte header (u32 W, u32 H) + float32 row-major.
Poses:           text, four lines of four numbers per view, camera-to-world.
Cloud:           binary little-endian PLY with float32 vertex properties
                 x, y, z, intensity, opacity, scale_0..2, rot_0..3.
Regressor:       8-byte magic "EVGGSLIN", u32 n_out, u32 n_in, float64
                 weights row-major, float64 bias.
Voxel stack:     8-byte magic "EVGGSVOX", u32 segments, u32 bins, u32 H,
                 u32 W, float32 data.
Metric report:   flat text key=value.

A scene directory holds meta.txt, poses.txt, events.bin, and per-view
frame_###.pgm, depth_###.raw, mask_###.pgm files.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraView
from .events import DEFAULT_THRESHOLD, EventStream
from .gaussians import GaussianCloud
from .pipeline import DEFAULT_D_MAX, PerPixelRegressor

EVENT_MAGIC = b"EVGGSEVT"
REGRESSOR_MAGIC = b"EVGGSLIN"
VOXEL_MAGIC = b"EVGGSVOX"

_EVENT_DTYPE = np.dtype(
    {
        "names": ["t", "x", "y", "p", "pad"],
        "formats": ["<u8", "<u2", "<u2", "i1", "(3,)u1"],
    }
)
assert _EVENT_DTYPE.itemsize == 16

_PLY_PROPERTIES = (
    "x",
    "y",
    "z",
    "intensity",
    "opacity",
    "scale_0",
    "scale_1",
    "scale_2",
    "rot_0",
    "rot_1",
    "rot_2",
    "rot_3",
)


class FormatError(ValueError):
    """A file failed validation; the message names the file and the problem."""


def _fmt(value: float) -> str:
    return "%.17g" % value


# ---------------------------------------------------------------------------
# events


def save_events(path, stream: EventStream) -> None:
    path = Path(path)
    w, h = stream.resolution
    if w > 0xFFFF or h > 0xFFFF:
        raise ValueError("resolution exceeds the u16 header fields")
    rec = np.zeros(len(stream), dtype=_EVENT_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    with open(path, "wb") as f:
        f.write(EVENT_MAGIC)
        f.write(struct.pack("<HHI", w, h, len(stream)))
        f.write(rec.tobytes())


def load_events(path, t_begin: int | None = None, t_end: int | None = None) -> EventStream:
    """Read an event file; the window defaults to [first, last + 1) when not given."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    if blob[:8] != EVENT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}")
    w, h, count = struct.unpack("<HHI", blob[8:16])
    expected = 16 + 16 * count
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} != header-declared {expected} bytes")
    rec = np.frombuffer(blob, dtype=_EVENT_DTYPE, offset=16)
    if count and rec["pad"].any():
        raise FormatError(f"{path}: non-zero pad bytes")
    if count and not np.all(np.abs(rec["p"].astype(np.int32)) == 1):
        raise FormatError(f"{path}: polarity outside {{+1, -1}}")
    t = rec["t"].astype(np.int64)
    if t_begin is None:
        t_begin = int(t[0]) if count else 0
    if t_end is None:
        t_end = int(t[-1]) + 1 if count else 0
    try:
        return EventStream(
            t, rec["x"].astype(np.int32), rec["y"].astype(np.int32), rec["p"].copy(), (w, h), t_begin, t_end
        )
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


# ---------------------------------------------------------------------------
# images and depth maps


def save_pgm(path, image: np.ndarray) -> None:
    """Write a [0, 1] grayscale map as an 8-bit binary PGM."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("image must be 2D")
    if image.min() < 0 or image.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    data = np.round(image * 255.0).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def load_pgm(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    try:
        w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError as e:
        raise FormatError(f"{path}: bad PGM header") from e
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    data = parts[4]
    if len(data) != w * h:
        raise FormatError(f"{path}: payload is {len(data)} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def save_depth_raw(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError("depth must be 2D")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(depth.astype("<f4").tobytes())


def load_depth_raw(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated header")
    w, h = struct.unpack("<II", blob[:8])
    if len(blob) != 8 + 4 * w * h:
        raise FormatError(f"{path}: size {len(blob)} != expected {8 + 4 * w * h} bytes")
    return np.frombuffer(blob, dtype="<f4", offset=8).reshape(h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# poses and meta


def save_poses(path, poses: list[np.ndarray]) -> None:
    lines = []
    for p in poses:
        if np.asarray(p).shape != (4, 4):
            raise ValueError("each pose must be 4x4")
        for row in np.asarray(p, dtype=np.float64):
            lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_poses(path) -> list[np.ndarray]:
    path = Path(path)
    rows = []
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 4:
            raise FormatError(f"{path}: line {ln} has {len(vals)} values, expected 4")
        try:
            rows.append([float(v) for v in vals])
        except ValueError as e:
            raise FormatError(f"{path}: line {ln}: {e}") from e
    if len(rows) % 4 != 0:
        raise FormatError(f"{path}: {len(rows)} rows is not a multiple of 4")
    return [np.array(rows[i : i + 4]) for i in range(0, len(rows), 4)]


def _save_keyvalues(path, pairs: dict) -> None:
    lines = []
    for key, value in pairs.items():
        text = _fmt(value) if isinstance(value, float) else str(value)
        lines.append(f"{key}={text}")
    Path(path).write_text("\n".join(lines) + "\n")


def _load_keyvalues(path) -> dict[str, str]:
    path = Path(path)
    out: dict[str, str] = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}: line {ln} is not key=value")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class SceneMeta:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    z_near: float
    threshold: float = DEFAULT_THRESHOLD
    d_max: float = DEFAULT_D_MAX
    n_views: int = 0
    t_begin: int = 0
    t_end: int = 0


@dataclass(frozen=True)
class SceneView:
    pose: np.ndarray
    frame: np.ndarray
    depth: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class SceneBundle:
    """Calibrated views (pose, grayscale frame, depth, silhouette) plus the event sweep."""

    meta: SceneMeta
    views: list[SceneView]
    events: EventStream

    def camera(self, k: int | None = None) -> CameraView:
        m = self.meta
        K = np.array([[m.fx, 0.0, m.cx], [0.0, m.fy, m.cy], [0.0, 0.0, 1.0]])
        pose = np.eye(4) if k is None else self.views[k].pose
        return CameraView(K, pose, (m.width, m.height), m.z_near)


def save_scene(bundle: SceneBundle, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = bundle.meta
    _save_keyvalues(
        directory / "meta.txt",
        {
            "width": m.width,
            "height": m.height,
            "fx": float(m.fx),
            "fy": float(m.fy),
            "cx": float(m.cx),
            "cy": float(m.cy),
            "z_near": float(m.z_near),
            "threshold": float(m.threshold),
            "d_max": float(m.d_max),
            "n_views": m.n_views,
            "t_begin": m.t_begin,
            "t_end": m.t_end,
        },
    )
    save_poses(directory / "poses.txt", [v.pose for v in bundle.views])
    save_events(directory / "events.bin", bundle.events)
    for k, view in enumerate(bundle.views):
        save_pgm(directory / f"frame_{k:03d}.pgm", view.frame)
        save_depth_raw(directory / f"depth_{k:03d}.raw", view.depth)
        save_pgm(directory / f"mask_{k:03d}.pgm", view.mask)


def load_scene(directory) -> SceneBundle:
    """Load and fully validate a scene directory."""
    directory = Path(directory)
    meta_path = directory / "meta.txt"
    if not meta_path.exists():
        raise FormatError(f"{meta_path}: missing meta file")
    kv = _load_keyvalues(meta_path)
    try:
        meta = SceneMeta(
            width=int(kv["width"]),
            height=int(kv["height"]),
            fx=float(kv["fx"]),
            fy=float(kv["fy"]),
            cx=float(kv["cx"]),
            cy=float(kv["cy"]),
            z_near=float(kv["z_near"]),
            threshold=float(kv["threshold"]),
            d_max=float(kv["d_max"]),
            n_views=int(kv["n_views"]),
            t_begin=int(kv["t_begin"]),
            t_end=int(kv["t_end"]),
        )
    except KeyError as e:
        raise FormatError(f"{meta_path}: missing key {e.args[0]}") from e

    poses = load_poses(directory / "poses.txt")
    if len(poses) != meta.n_views:
        raise FormatError(
            f"{directory / 'poses.txt'}: invariant n_views broken, "
            f"{len(poses)} poses for {meta.n_views} views"
        )

    shape = (meta.height, meta.width)
    views = []
    for k in range(meta.n_views):
        frame = load_pgm(directory / f"frame_{k:03d}.pgm")
        depth = load_depth_raw(directory / f"depth_{k:03d}.raw")
        mask = load_pgm(directory / f"mask_{k:03d}.pgm")
        for name, arr in (("frame", frame), ("depth", depth), ("mask", mask)):
            if arr.shape != shape:
                raise FormatError(
                    f"{directory / f'{name}_{k:03d}'}: invariant resolution broken, "
                    f"shape {arr.shape} != meta {shape}"
                )
        if not np.all(np.isfinite(depth)):
            raise FormatError(f"{directory / f'depth_{k:03d}.raw'}: invariant finite broken")
        views.append(SceneView(poses[k], frame, depth, mask))

    events = load_events(directory / "events.bin", meta.t_begin, meta.t_end)
    if events.resolution != (meta.width, meta.height):
        raise FormatError(
            f"{directory / 'events.bin'}: invariant resolution broken, "
            f"{events.resolution} != meta {(meta.width, meta.height)}"
        )
    bundle = SceneBundle(meta, views, events)
    for k in range(meta.n_views):
        try:
            bundle.camera(k)
        except ValueError as e:
            raise FormatError(f"{directory / 'poses.txt'}: view {k}: {e}") from e
    return bundle


# ---------------------------------------------------------------------------
# point clouds


def save_cloud_ply(cloud: GaussianCloud, path) -> None:
    """Binary little-endian PLY with float32 per-vertex Gaussian parameters."""
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {p}" for p in _PLY_PROPERTIES]
    header.append("end_header")
    data = np.concatenate(
        [
            cloud.mu,
            cloud.intensity[:, None],
            cloud.opacity[:, None],
            cloud.s,
            cloud.q,
        ],
        axis=1,
    ).astype("<f4")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_cloud_ply(path) -> GaussianCloud:
    """Read a cloud PLY; quaternions are renormalized after float32 rounding."""
    path = Path(path)
    blob = path.read_bytes()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise FormatError(f"{path}: missing end_header")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    body = blob[end + len(b"end_header\n") :]
    if len(header) < 3 or header[0] != "ply" or header[1] != "format binary_little_endian 1.0":
        raise FormatError(f"{path}: not a binary little-endian PLY")
    if not header[2].startswith("element vertex "):
        raise FormatError(f"{path}: expected an element vertex line")
    try:
        n = int(header[2].split()[-1])
    except ValueError as e:
        raise FormatError(f"{path}: bad vertex count") from e
    props = [line.split()[-1] for line in header[3:] if line.startswith("property ")]
    if tuple(props) != _PLY_PROPERTIES:
        raise FormatError(f"{path}: unexpected property list {props}")
    if len(body) != 4 * len(_PLY_PROPERTIES) * n:
        raise FormatError(f"{path}: payload is {len(body)} bytes, expected {4 * 12 * n}")
    data = np.frombuffer(body, dtype="<f4").reshape(n, 12).astype(np.float64)
    if n == 0:
        return GaussianCloud.empty()
    q = data[:, 8:12]
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise FormatError(f"{path}: zero-norm quaternion")
    try:
        return GaussianCloud(
            mu=data[:, 0:3],
            q=q / norms,
            s=data[:, 5:8],
            opacity=data[:, 4],
            intensity=data[:, 3],
        )
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


# ---------------------------------------------------------------------------
# regressor weights and voxel stacks


def save_regressor(path, regressor: PerPixelRegressor) -> None:
    with open(path, "wb") as f:
        f.write(REGRESSOR_MAGIC)
        f.write(struct.pack("<II", 8, regressor.n_features))
        f.write(regressor.weight.astype("<f8").tobytes())
        f.write(regressor.bias.astype("<f8").tobytes())


def load_regressor(path) -> PerPixelRegressor:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:8] != REGRESSOR_MAGIC:
        raise FormatError(f"{path}: not a regressor weight file")
    n_out, n_in = struct.unpack("<II", blob[8:16])
    expected = 16 + 8 * (n_out * n_in + n_out)
    if n_out != 8 or len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} != expected {expected} bytes")
    flat = np.frombuffer(blob, dtype="<f8", offset=16)
    weight = flat[: n_out * n_in].reshape(n_out, n_in)
    bias = flat[n_out * n_in :]
    return PerPixelRegressor(weight.copy(), bias.copy())


def save_voxel_stack(path, stack: np.ndarray) -> None:
    stack = np.asarray(stack)
    if stack.ndim != 4:
        raise ValueError("voxel stack must be (segments, bins, H, W)")
    s, b, h, w = stack.shape
    with open(path, "wb") as f:
        f.write(VOXEL_MAGIC)
        f.write(struct.pack("<IIII", s, b, h, w))
        f.write(stack.astype("<f4").tobytes())


def load_voxel_stack(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 24 or blob[:8] != VOXEL_MAGIC:
        raise FormatError(f"{path}: not a voxel stack file")
    s, b, h, w = struct.unpack("<IIII", blob[8:24])
    if len(blob) != 24 + 4 * s * b * h * w:
        raise FormatError(f"{path}: truncated voxel stack")
    return np.frombuffer(blob, dtype="<f4", offset=24).reshape(s, b, h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# metric reports


def format_metric_report(values: dict[str, float]) -> str:
    return "\n".join(f"{k}={_fmt(float(v))}" for k, v in values.items()) + "\n"


def save_metric_report(path, values: dict[str, float]) -> None:
    Path(path).write_text(format_metric_report(values))


def load_metric_report(path) -> dict[str, float]:
    return {k: float(v) for k, v in _load_keyvalues(path).items()}
