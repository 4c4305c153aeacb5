"""Plain-text file formats used by the CLI and test fixtures.

* point clouds: ASCII ``x y z intensity`` per line, ``#`` header lines carry
  ``key: value`` metadata (``frame_id`` always, map name and box for maps)
* thermal images: binary 16-bit portable graymap (P5, maxval up to 65535)
* detection streams: ``t kind x y z nx ny nz`` per line, plus optional
  ``t robot x y z`` lines giving the robot position used for the gates
* calibration observations: ``X Y Z u v`` per line (LiDAR-frame point, pixel)
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .geometry import PointCloud, Pose
from .localization import ReferenceMap
from .thermal import CalibrationObservation, Detection, ThermalImage

PathLike = Union[str, Path]


class FormatError(ValueError):
    pass


# --- point clouds ------------------------------------------------------------------------

def write_cloud(path: PathLike, cloud: PointCloud, header: Optional[dict] = None, normals=None) -> None:
    meta = {"frame_id": cloud.frame_id, **(header or {})}
    inten = cloud.intensity if cloud.intensity is not None else np.zeros(len(cloud))
    cols = [cloud.points, inten[:, None]]
    if normals is not None:
        meta["columns"] = "x y z intensity nx ny nz"
        cols.append(np.asarray(normals, dtype=float).reshape(-1, 3))
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}: {json.dumps(v) if not isinstance(v, str) else v}\n")
        np.savetxt(fh, np.hstack(cols), fmt="%.6f")


def read_cloud_with_header(path: PathLike) -> tuple[PointCloud, dict, Optional[np.ndarray]]:
    meta: dict = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                m = re.match(r"#\s*([A-Za-z_]+)\s*:\s*(.*)$", s)
                if m:
                    key, val = m.group(1), m.group(2).strip()
                    try:
                        meta[key] = json.loads(val)
                    except json.JSONDecodeError:
                        meta[key] = val
                continue
            parts = s.split()
            if len(parts) not in (3, 4, 7):
                raise FormatError(f"{path}:{ln}: expected 3, 4 or 7 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts] + [0.0] * (4 - len(parts)) if len(parts) < 4
                            else [float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{ln}: {exc}") from exc
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise FormatError(f"{path}: inconsistent column count")
    arr = np.array(rows, dtype=float).reshape(-1, widths.pop() if widths else 4)
    normals = arr[:, 4:7] if arr.shape[1] == 7 else None
    cloud = PointCloud(arr[:, :3], arr[:, 3], str(meta.get("frame_id", "sensor")))
    return cloud, meta, normals


def read_cloud(path: PathLike) -> PointCloud:
    return read_cloud_with_header(path)[0]


def write_map(path: PathLike, ref: ReferenceMap) -> None:
    header = {"name": ref.name, "priority": ref.priority,
              "box_min": [float(v) for v in ref.box_min], "box_max": [float(v) for v in ref.box_max]}
    write_cloud(path, PointCloud(ref.points, frame_id="field"), header, normals=ref.normals)


def _box(v, fill):
    if v is None:
        return np.full(3, fill)
    return np.array([fill if x is None else float(x) for x in v])


def read_map(path: PathLike) -> ReferenceMap:
    """Read a map cloud; normals come from the file or, failing that, from local PCA."""
    cloud, meta, normals = read_cloud_with_header(path)
    if normals is None:
        normals = estimate_normals(cloud.points)
    return ReferenceMap(str(meta.get("name", Path(path).stem)), cloud.points, normals,
                        _box(meta.get("box_min"), -np.inf), _box(meta.get("box_max"), np.inf),
                        int(meta.get("priority", 0)))


def estimate_normals(points: np.ndarray, k: int = 12) -> np.ndarray:
    from scipy.spatial import cKDTree
    pts = np.asarray(points, dtype=float)
    k = min(k, len(pts))
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx] - pts[idx].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


# --- thermal images ----------------------------------------------------------------------

def write_pgm(path: PathLike, image: ThermalImage | np.ndarray, maxval: int = 65535) -> None:
    img = image.intensities if isinstance(image, ThermalImage) else np.asarray(image, dtype=float)
    data = np.clip(np.rint(img), 0, maxval).astype(">u2" if maxval > 255 else "u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: PathLike, timestamp: float = 0.0) -> ThermalImage:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, with optional comments
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(raw, pos)
        if not m:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace byte before the raster
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(raw) - pos < n:
        raise FormatError(f"{path}: raster shorter than {w}x{h}")
    img = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(float)
    return ThermalImage(img, timestamp)


# --- detection streams -------------------------------------------------------------------

@dataclass(frozen=True)
class StreamEvent:
    t: float
    kind: str  # "thermal" | "hole" | "robot"
    position: np.ndarray
    normal: Optional[np.ndarray] = None

    def detection(self) -> Detection:
        return Detection(self.position, self.normal, self.kind, self.t)


def write_stream(path: PathLike, events: Iterable[StreamEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            vals = list(e.position) + ([] if e.normal is None else list(e.normal))
            fh.write(f"{e.t:.6f} {e.kind} " + " ".join(f"{v:.6f}" for v in vals) + "\n")


def read_stream(path: PathLike) -> list[StreamEvent]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            parts = s.split()
            try:
                t, kind = float(parts[0]), parts[1]
                vals = [float(p) for p in parts[2:]]
            except (IndexError, ValueError) as exc:
                raise FormatError(f"{path}:{ln}: {exc}") from exc
            if kind == "robot" and len(vals) == 3:
                out.append(StreamEvent(t, kind, np.array(vals)))
            elif kind in ("thermal", "hole") and len(vals) == 6:
                out.append(StreamEvent(t, kind, np.array(vals[:3]), np.array(vals[3:])))
            else:
                raise FormatError(f"{path}:{ln}: malformed {kind!r} line")
    if any(b.t < a.t for a, b in zip(out, out[1:])):
        raise FormatError(f"{path}: timestamps must be non-decreasing")
    return out


# --- calibration observations ------------------------------------------------------------

def read_observations(path: PathLike) -> list[CalibrationObservation]:
    arr = np.loadtxt(path, comments="#", ndmin=2)
    if arr.shape[1] != 5:
        raise FormatError(f"{path}: expected 5 columns (X Y Z u v)")
    return [CalibrationObservation(r[:3], (float(r[3]), float(r[4]))) for r in arr]


def write_observations(path: PathLike, obs: Sequence[CalibrationObservation]) -> None:
    arr = np.array([list(o.point_lidar) + list(o.pixel) for o in obs], dtype=float)
    np.savetxt(path, arr, fmt="%.6f", header="X Y Z u v")


def parse_pose(text: str) -> Pose:
    """``x,y,z[,yaw_deg]`` or ``x,y,z,roll_deg,pitch_deg,yaw_deg``."""
    vals = [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]
    if len(vals) == 3:
        return Pose.from_xyz_yaw(vals, 0.0)
    if len(vals) == 4:
        return Pose.from_xyz_yaw(vals[:3], np.radians(vals[3]))
    if len(vals) == 6:
        r, p, y = np.radians(vals[3:])
        return Pose.from_xyz_rpy(vals[:3], r, p, y)
    raise FormatError(f"pose needs 3, 4 or 6 numbers, got {len(vals)}")
