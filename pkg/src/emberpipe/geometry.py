"""Frames, rigid poses, pinhole projection and plane statistics.

Everything here is a value type or a pure function over numpy arrays.
Angles are radians throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DegenerateInputError(ValueError):
    """Input does not support the requested geometric estimate."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotvec_to_matrix(rv) -> np.ndarray:
    """Rodrigues formula."""
    rv = np.asarray(rv, dtype=float)
    theta = float(np.linalg.norm(rv))
    if theta < 1e-12:
        return np.eye(3) + skew(rv)
    k = skew(rv / theta)
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def matrix_to_rotvec(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_t = min(1.0, max(-1.0, (np.trace(R) - 1.0) / 2.0))
    theta = math.acos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-9:
        return 0.5 * w
    if math.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        i = int(np.argmax(axis))
        axis = B[i] / axis[i]
        axis /= np.linalg.norm(axis)
        return axis * theta
    return w * (theta / (2.0 * math.sin(theta)))


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R @ x + t (child frame expressed in parent frame)."""

    rotation: np.ndarray = field(default_factory=lambda: _frozen(np.eye(3)))
    translation: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose contains non-finite values")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_xyz_rpy(cls, xyz=(0.0, 0.0, 0.0), roll=0.0, pitch=0.0, yaw=0.0) -> "Pose":
        R = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
        return cls(R, xyz)

    @classmethod
    def from_xyz_yaw(cls, xyz, yaw: float) -> "Pose":
        return cls(rot_z(yaw), xyz)

    @classmethod
    def from_rotvec(cls, rotvec, xyz=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(rotvec_to_matrix(rotvec), xyz)

    @classmethod
    def from_quaternion(cls, q, xyz=(0.0, 0.0, 0.0)) -> "Pose":
        """q = (w, x, y, z); normalized on construction."""
        w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
        R = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])
        return cls(R, xyz)

    def quaternion(self) -> np.ndarray:
        R = self.rotation
        tr = np.trace(R)
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
            q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        elif R[1, 1] > R[2, 2]:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
            q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
            q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        q = np.array(q)
        return q if q[0] >= 0 else -q

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    @property
    def position(self) -> np.ndarray:
        return self.translation

    def rpy(self) -> tuple[float, float, float]:
        R = self.rotation
        pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
        roll = math.atan2(R[2, 1], R[2, 2])
        return roll, pitch, self.yaw

    def apply(self, points) -> np.ndarray:
        """Map points (3,) or (N, 3) from the child frame into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def distance_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def angle_to(self, other: "Pose") -> float:
        return rotation_angle(self.rotation.T @ other.rotation)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.rotation, other.rotation, atol=atol)
                    and np.allclose(self.translation, other.translation, atol=atol))

    def as_list(self) -> list[float]:
        """[x, y, z, qw, qx, qy, qz]"""
        return [float(v) for v in self.translation] + [float(v) for v in self.quaternion()]


def compose(a: Pose, b: Pose) -> Pose:
    """(a o b)(x) == a(b(x))."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def rotation_angle(R) -> float:
    return math.acos(min(1.0, max(-1.0, (float(np.trace(R)) - 1.0) / 2.0)))


def angle_between(a, b) -> float:
    """Angle in radians between two non-zero vectors (atan2 form, accurate near 0 and pi)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return math.atan2(float(np.linalg.norm(np.cross(a, b))), float(np.dot(a, b)))


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    intensity: Optional[np.ndarray] = None
    frame_id: str = "sensor"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=float).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError("intensity length does not match point count")
            if np.any(inten < 0):
                raise ValueError("intensity must be non-negative")
            object.__setattr__(self, "intensity", _frozen(inten))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def transformed(self, pose: Pose, frame_id: Optional[str] = None) -> "PointCloud":
        return PointCloud(pose.apply(self.points) if len(self) else self.points,
                          self.intensity, frame_id or self.frame_id)

    def select(self, mask_or_idx) -> "PointCloud":
        inten = None if self.intensity is None else self.intensity[mask_or_idx]
        return PointCloud(self.points[mask_or_idx], inten, self.frame_id)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    @classmethod
    def lepton(cls, fx: float = 115.0) -> "PinholeCamera":
        return cls(fx, fx, 80.0, 60.0, 160, 120)


def project(camera: PinholeCamera, point) -> Optional[tuple[float, float]]:
    """Pixel (u, v) of a camera-frame point, or None when z <= 0."""
    x, y, z = (float(c) for c in point)
    if z <= 0.0:
        return None
    return camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy


def project_many(camera: PinholeCamera, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection. Returns (uv (N, 2), in_front mask)."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    front = p[:, 2] > 0.0
    z = np.where(front, p[:, 2], 1.0)
    uv = np.empty((p.shape[0], 2))
    uv[:, 0] = camera.fx * p[:, 0] / z + camera.cx
    uv[:, 1] = camera.fy * p[:, 1] / z + camera.cy
    return uv, front


def unproject(camera: PinholeCamera, u: float, v: float, depth: float) -> np.ndarray:
    """Camera-frame point at the given depth (z) along pixel (u, v)."""
    return np.array([(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth])


def pixel_ray(camera: PinholeCamera, u, v) -> np.ndarray:
    """Unit viewing ray(s) in the camera frame."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass(frozen=True)
class PlaneModel:
    normal: np.ndarray
    offset: float
    inlier_indices: np.ndarray
    rms: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        object.__setattr__(self, "normal", _frozen(n))
        object.__setattr__(self, "offset", float(self.offset))
        idx = np.asarray(self.inlier_indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "inlier_indices", idx)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def facing(self, viewpoint) -> "PlaneModel":
        """Same plane with the normal flipped, if needed, toward a viewpoint."""
        if float(np.dot(self.normal, viewpoint) - self.offset) >= 0.0:
            return self
        return PlaneModel(-self.normal, -self.offset, self.inlier_indices, self.rms)


def mean_and_normal(points, sensor=None) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and smallest-eigenvalue covariance direction of a point set.

    If ``sensor`` is given the normal is oriented so that it points from the
    mean toward the sensor.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise DegenerateInputError(f"need at least 3 points, got {pts.shape[0]}")
    mean = pts.mean(axis=0)
    cov = np.cov((pts - mean).T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[2], 1e-300)
    if evals[1] <= 1e-12 * scale or evals[2] <= 0.0:
        raise DegenerateInputError("points are collinear or coincident")
    normal = evecs[:, 0] / np.linalg.norm(evecs[:, 0])
    if sensor is not None and float(np.dot(normal, np.asarray(sensor, dtype=float) - mean)) < 0.0:
        normal = -normal
    return mean, normal


def _plane_lsq(pts: np.ndarray) -> tuple[np.ndarray, float, float]:
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[2]
    d = float(n @ c)
    rms = float(s[2] / math.sqrt(pts.shape[0])) if pts.shape[0] else 0.0
    return n, d, rms


def fit_planes_ransac(cloud: PointCloud | np.ndarray, max_planes: int = 4, dist_threshold: float = 0.03,
                      min_inliers: int = 150, iterations: int = 400, rng_seed: int = 0,
                      batch: int = 64) -> list[PlaneModel]:
    """Sequential RANSAC plane extraction.

    Each plane's inliers are removed before the next one is searched. Planes
    come back sorted by inlier count (largest first). Hypotheses are scored in
    batches; a tie in inlier count goes to the lower fit RMS.
    """
    if dist_threshold <= 0:
        raise ValueError("dist_threshold must be positive")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    pts_all = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    rng = np.random.default_rng(rng_seed)
    remaining = np.arange(pts_all.shape[0])
    planes: list[PlaneModel] = []

    while len(planes) < max_planes and remaining.size >= max(3, min_inliers):
        pts = pts_all[remaining]
        n_pts = pts.shape[0]
        samples = rng.integers(0, n_pts, size=(iterations, 3))
        a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
        normals = np.cross(b - a, c - a)
        norms = np.linalg.norm(normals, axis=1)
        valid = norms > 1e-12
        normals[valid] /= norms[valid, None]
        offsets = np.einsum("ij,ij->i", normals, a)

        best_count, best_rms, best_h = -1, math.inf, -1
        for start in range(0, iterations, batch):
            sl = slice(start, min(start + batch, iterations))
            dist = np.abs(pts @ normals[sl].T - offsets[sl])
            inl = dist <= dist_threshold
            counts = inl.sum(axis=0)
            counts[~valid[sl]] = -1
            sq = np.where(inl, dist * dist, 0.0).sum(axis=0)
            for k in np.flatnonzero(counts >= max(best_count, 3)):
                cnt = int(counts[k])
                rms = math.sqrt(sq[k] / cnt)
                if cnt > best_count or (cnt == best_count and rms < best_rms):
                    best_count, best_rms, best_h = cnt, rms, start + int(k)
        if best_h < 0 or best_count < min_inliers:
            break

        n, d = normals[best_h], offsets[best_h]
        inl_local = np.flatnonzero(np.abs(pts @ n - d) <= dist_threshold)
        # least-squares refinement; keep it only if support does not shrink
        n2, d2, _ = _plane_lsq(pts[inl_local])
        inl2 = np.flatnonzero(np.abs(pts @ n2 - d2) <= dist_threshold)
        if inl2.size >= inl_local.size:
            n, d, inl_local = n2, d2, inl2
        resid = pts[inl_local] @ n - d
        planes.append(PlaneModel(n, d, remaining[inl_local], float(np.sqrt(np.mean(resid ** 2)))))
        keep = np.ones(n_pts, dtype=bool)
        keep[inl_local] = False
        remaining = remaining[keep]

    planes.sort(key=lambda p: (-p.inlier_indices.size, p.rms))
    return planes


def plane_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """Two in-plane unit axes. The first is horizontal unless the plane is."""
    n = np.asarray(normal, dtype=float)
    up = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(up, n)
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.cross(np.array([0.0, 1.0, 0.0]), n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2 / np.linalg.norm(e2)


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """First point per voxel, in input order (deterministic)."""
    if points.shape[0] == 0:
        return points
    keys = np.floor(points / voxel).astype(np.int64)
    _, idx = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(idx)]


def as_points(seq: Sequence) -> np.ndarray:
    return np.asarray(seq, dtype=float).reshape(-1, 3)
