"""Thermal blob detection, heat-source localization and LiDAR/thermal extrinsics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import (DegenerateInputError, PinholeCamera, PointCloud, Pose, mean_and_normal,
                       pixel_ray, project_many)


class InsufficientSupportError(ValueError):
    """Too few LiDAR points fall inside a heat contour."""


class OutOfRangeError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThermalImage:
    intensities: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        img = np.asarray(self.intensities, dtype=float)
        if img.ndim != 2 or img.shape[0] == 0 or img.shape[1] == 0:
            raise ValueError("thermal image must be a non-empty 2D grid")
        if not np.all(np.isfinite(img)):
            raise ValueError("thermal image contains non-finite values")
        img.setflags(write=False)
        object.__setattr__(self, "intensities", img)

    @property
    def height(self) -> int:
        return int(self.intensities.shape[0])

    @property
    def width(self) -> int:
        return int(self.intensities.shape[1])


@dataclass(frozen=True)
class ThermalContour:
    pixels: np.ndarray  # (N, 2) integer (row, col)
    area: int
    bbox: tuple[int, int, int, int]  # (u0, v0, u1, v1), inclusive
    center_of_intensity: tuple[float, float]  # (u, v)
    min_intensity: float
    max_intensity: float
    mean_intensity: float

    @property
    def bbox_width(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def bbox_height(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1


def detect_heat(image: ThermalImage | np.ndarray, lower: float, upper: float,
                min_area: int = 1, max_area: int = 10_000) -> list[ThermalContour]:
    """Band-threshold the image and return area-gated 4-connected blobs.

    Contours are ordered by descending area, then by position, so the output
    is deterministic.
    """
    if not lower < upper:
        raise ValueError("lower bound must be below upper bound")
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    img = image.intensities if isinstance(image, ThermalImage) else np.asarray(image, dtype=float)
    mask = (img >= lower) & (img <= upper)
    labels, n = ndimage.label(mask)  # default structure is 4-connectivity
    contours = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labels == lab)
        area = rows.size
        if area < min_area or area > max_area:
            continue
        vals = img[rows, cols]
        w = vals.sum()
        if w > 0:
            cu, cv = float((cols * vals).sum() / w), float((rows * vals).sum() / w)
        else:
            cu, cv = float(cols.mean()), float(rows.mean())
        contours.append(ThermalContour(
            pixels=np.stack([rows, cols], axis=1),
            area=int(area),
            bbox=(int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())),
            center_of_intensity=(cu, cv),
            min_intensity=float(vals.min()),
            max_intensity=float(vals.max()),
            mean_intensity=float(vals.mean()),
        ))
    contours.sort(key=lambda c: (-c.area, c.bbox[1], c.bbox[0]))
    return contours


@dataclass(frozen=True)
class Extrinsics:
    """Pose of the thermal camera expressed in the LiDAR frame."""

    thermal_camera_in_lidar_frame: Pose = field(default_factory=Pose)
    residual_px: float = 0.0
    residual_history: tuple[float, ...] = ()


@dataclass(frozen=True)
class Detection:
    position: np.ndarray
    normal: np.ndarray
    kind: str  # "thermal" | "hole"
    timestamp: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        nn = np.linalg.norm(n)
        if not np.all(np.isfinite(p)) or not np.isfinite(nn) or nn == 0:
            raise ValueError("detection needs a finite position and non-zero normal")
        if self.kind not in ("thermal", "hole"):
            raise ValueError(f"unknown detection kind {self.kind!r}")
        p.setflags(write=False)
        n = n / nn
        n.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "timestamp", float(self.timestamp))


def localize_heat_lidar(contour: ThermalContour, cloud: PointCloud, extr: Extrinsics, cam: PinholeCamera,
                        sensor_pose: Pose, timestamp: float = 0.0, min_points: int = 3,
                        margin_px: float = 0.0) -> Detection:
    """Mean position and covariance normal of the LiDAR points inside the contour bounding box.

    ``cloud`` is in the LiDAR frame; ``sensor_pose`` maps the LiDAR frame into
    the localization frame, where the returned detection lives. ``margin_px``
    grows the box on every side, which brings in surrounding wall points when
    the box barely covers a recessed opening.
    """
    if len(cloud) == 0:
        raise InsufficientSupportError("empty point cloud")
    lidar_to_cam = extr.thermal_camera_in_lidar_frame.inverse()
    uv, front = project_many(cam, lidar_to_cam.apply(cloud.points))
    u0, v0, u1, v1 = contour.bbox
    # pixel (u0..u1) covers [u0 - 0.5, u1 + 0.5] in continuous coordinates
    m = 0.5 + margin_px
    inside = (front & (uv[:, 0] >= u0 - m) & (uv[:, 0] <= u1 + m)
              & (uv[:, 1] >= v0 - m) & (uv[:, 1] <= v1 + m))
    sel = cloud.points[inside]
    if sel.shape[0] < min_points:
        raise InsufficientSupportError(f"{sel.shape[0]} LiDAR points in heat bounding box")
    world = sensor_pose.apply(sel)
    try:
        mean, normal = mean_and_normal(world, sensor=sensor_pose.translation)
    except DegenerateInputError as exc:
        raise InsufficientSupportError(str(exc)) from exc
    return Detection(mean, normal, "thermal", timestamp)


@dataclass(frozen=True)
class DistanceCalibration:
    """Monotone piecewise-linear map from raw pinhole distance to corrected distance.

    Outside the table the map continues with slope one from the end points,
    which keeps it strictly increasing everywhere.
    """

    raw: tuple[float, ...] = ()
    corrected: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.raw) != len(self.corrected):
            raise ValueError("calibration table columns differ in length")
        if any(b <= a for a, b in zip(self.raw, self.raw[1:])) or \
                any(b <= a for a, b in zip(self.corrected, self.corrected[1:])):
            raise ValueError("calibration table must be strictly increasing")

    def __call__(self, raw: float) -> float:
        if not self.raw:
            return float(raw)
        if raw <= self.raw[0]:
            return self.corrected[0] + (raw - self.raw[0])
        if raw >= self.raw[-1]:
            return self.corrected[-1] + (raw - self.raw[-1])
        return float(np.interp(raw, self.raw, self.corrected))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "DistanceCalibration":
        pairs = sorted((float(a), float(b)) for a, b in pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))


def estimate_distance_bbox(contour: ThermalContour, cam: PinholeCamera, element_size: float = 0.15,
                           calib: Optional[DistanceCalibration] = None, camera_pose: Optional[Pose] = None,
                           timestamp: float = 0.0) -> tuple[float, Detection]:
    """Range to a heat element of known width from its bounding-box width.

    Assumes the element is seen roughly head-on. The detection is expressed in
    the frame of ``camera_pose`` (camera frame when omitted).
    """
    width = contour.bbox_width
    if width < 2:
        raise OutOfRangeError(f"bounding box width {width} px is below 2 px")
    raw = cam.fx * element_size / width
    dist = calib(raw) if calib is not None else raw
    u, v = contour.center_of_intensity
    # the estimate is a range, so place the element along the pixel ray
    ray = pixel_ray(cam, u, v)
    p_cam = dist * ray
    pose = camera_pose or Pose()
    return dist, Detection(pose.apply(p_cam), pose.apply_vector(-ray), "thermal", timestamp)


# --- extrinsic calibration ---------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationObservation:
    point_lidar: np.ndarray  # hole centre in the LiDAR frame
    pixel: tuple[float, float]  # thermal centre of intensity


def _residuals(pose: Pose, pts: np.ndarray, px: np.ndarray, cam: PinholeCamera) -> np.ndarray:
    p_cam = pose.inverse().apply(pts)
    z = p_cam[:, 2]
    # points behind the camera get a large but finite penalty
    zc = np.where(z > 1e-6, z, 1e-6)
    u = cam.fx * p_cam[:, 0] / zc + cam.cx
    v = cam.fy * p_cam[:, 1] / zc + cam.cy
    r = np.stack([u - px[:, 0], v - px[:, 1]], axis=1)
    r[z <= 1e-6] = 1e4
    return r.reshape(-1)


def _perturb(pose: Pose, delta: np.ndarray) -> Pose:
    return Pose.from_rotvec(delta[:3], delta[3:]) @ pose


def calibrate_extrinsics(observations: Sequence[CalibrationObservation], cam: PinholeCamera,
                         initial: Extrinsics, max_iterations: int = 100, tol: float = 1e-10,
                         max_residual_px: float = 2.0, min_observations: int = 6,
                         min_viewpoints: int = 3) -> Extrinsics:
    """Levenberg-Marquardt over the 6-DoF camera pose minimizing pixel reprojection error.

    Only steps that lower the cost are accepted, so ``residual_history`` (RMS
    pixel error after each accepted step) is non-increasing.
    """
    if len(observations) < min_observations:
        raise ValueError(f"need >= {min_observations} observations, got {len(observations)}")
    pts = np.array([o.point_lidar for o in observations], dtype=float)
    px = np.array([o.pixel for o in observations], dtype=float)
    distinct = np.unique(np.round(pts / 0.05).astype(np.int64), axis=0).shape[0]
    if distinct < min_viewpoints:
        raise ValueError(f"observations cover {distinct} distinct positions; need {min_viewpoints}")

    pose = initial.thermal_camera_in_lidar_frame
    r = _residuals(pose, pts, px, cam)
    cost = float(r @ r)
    n_obs = pts.shape[0]
    history = [math.sqrt(cost / n_obs)]
    lam = 1e-3
    eps = 1e-6
    for _ in range(max_iterations):
        J = np.empty((r.size, 6))
        for k in range(6):
            d = np.zeros(6)
            d[k] = eps
            J[:, k] = (_residuals(_perturb(pose, d), pts, px, cam)
                       - _residuals(_perturb(pose, -d), pts, px, cam)) / (2 * eps)
        H = J.T @ J
        g = J.T @ r
        improved = False
        for _ in range(20):
            step = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
            cand = _perturb(pose, step)
            r_new = _residuals(cand, pts, px, cam)
            c_new = float(r_new @ r_new)
            if c_new < cost:
                pose, r = cand, r_new
                rel = (cost - c_new) / max(cost, 1e-300)
                cost = c_new
                lam = max(lam / 10.0, 1e-12)
                history.append(math.sqrt(cost / n_obs))
                improved = True
                break
            lam *= 10.0
        if not improved or rel < tol or np.linalg.norm(step) < 1e-12:
            break

    # RMS reprojection error per observation (pixel distance)
    residual = math.sqrt(cost / n_obs)
    if residual > max_residual_px:
        raise NonConvergenceError(f"reprojection residual {residual:.3f} px exceeds {max_residual_px} px")
    rank = np.linalg.matrix_rank(J.T @ J, tol=1e-9 * max(1.0, float(np.abs(J).max()) ** 2))
    if rank < 6:
        raise NonConvergenceError("observations do not constrain all six degrees of freedom")
    return Extrinsics(pose, residual, tuple(history))
