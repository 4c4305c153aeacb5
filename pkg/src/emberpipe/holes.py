"""Circular-opening detection in LiDAR clouds.

Pipeline: RANSAC planes -> orthographic raster of each plane's inliers ->
morphological closing -> circular Hough on enclosed empty regions -> refine
in the plane -> size gate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage, optimize

from .geometry import (DegenerateInputError, PlaneModel, PointCloud, Pose, fit_planes_ransac, plane_basis)


@dataclass(frozen=True)
class RasterPlaneImage:
    occupancy: np.ndarray  # (H, W) bool, row = v axis, col = u axis
    resolution: float
    origin: np.ndarray  # 3D point of pixel (0, 0) corner
    axis_u: np.ndarray
    axis_v: np.ndarray
    normal: Optional[np.ndarray] = None

    def pixel_to_point(self, col: float, row: float) -> np.ndarray:
        """3D position of continuous pixel coordinates (pixel centres at integer + 0.5)."""
        return self.origin + col * self.resolution * self.axis_u + row * self.resolution * self.axis_v

    def point_to_pixel(self, p) -> tuple[float, float]:
        d = np.asarray(p, dtype=float) - self.origin
        return float(d @ self.axis_u) / self.resolution, float(d @ self.axis_v) / self.resolution

    def with_occupancy(self, occ: np.ndarray) -> "RasterPlaneImage":
        return RasterPlaneImage(occ, self.resolution, self.origin, self.axis_u, self.axis_v, self.normal)


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]  # (col, row), continuous pixel coordinates
    radius: float
    score: float


@dataclass(frozen=True)
class HoleDetection:
    position: np.ndarray
    normal: np.ndarray
    diameter: float
    support_plane: PlaneModel
    score: float = 0.0
    timestamp: float = 0.0


@dataclass(frozen=True)
class HoleParams:
    ransac_threshold: float = 0.03
    ransac_iterations: int = 400
    min_inliers: int = 150
    max_planes: int = 4
    resolution: float = 0.01
    close_radius: int = 3
    min_diameter: float = 0.10
    max_diameter: float = 0.20
    min_score: float = 0.6
    max_range: Optional[float] = None
    forward_fov_deg: Optional[float] = None  # full width of the kept sector around sensor +x
    max_raster_pixels: int = 4_000_000
    refine: bool = True
    seed: int = 0


def rasterize_plane(plane: PlaneModel, cloud: PointCloud | np.ndarray, resolution: float = 0.01,
                    pad: int = 2) -> RasterPlaneImage:
    """Orthographic occupancy image of a plane's inliers, padded by ``pad`` pixels."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    inl = pts[plane.inlier_indices]
    if inl.shape[0] < 3:
        raise DegenerateInputError("fewer than 3 inliers")
    e1, e2 = plane_basis(plane.normal)
    base = plane.offset * plane.normal
    u = (inl - base) @ e1
    v = (inl - base) @ e2
    if (u.max() - u.min()) < 4 * resolution or (v.max() - v.min()) < 4 * resolution:
        raise DegenerateInputError("inlier extent is smaller than 4x4 pixels")
    u0 = u.min() - pad * resolution
    v0 = v.min() - pad * resolution
    cols = np.floor((u - u0) / resolution).astype(np.int64)
    rows = np.floor((v - v0) / resolution).astype(np.int64)
    W = int(cols.max()) + 1 + pad
    H = int(rows.max()) + 1 + pad
    occ = np.zeros((H, W), dtype=bool)
    occ[rows, cols] = True
    origin = base + u0 * e1 + v0 * e2
    return RasterPlaneImage(occ, resolution, origin, e1, e2, plane.normal)


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return (x * x + y * y) <= r * r


def close_gaps(image: RasterPlaneImage | np.ndarray, kernel_radius: int = 2):
    """Binary closing with a disk; pixels outside the image count as occupied for the erosion."""
    if kernel_radius < 1:
        raise ValueError("kernel_radius must be >= 1")
    occ = image.occupancy if isinstance(image, RasterPlaneImage) else np.asarray(image, dtype=bool)
    se = disk(kernel_radius)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(occ, se), se, border_value=1)
    return image.with_occupancy(closed) if isinstance(image, RasterPlaneImage) else closed


def enclosed_boundary(occ: np.ndarray) -> np.ndarray:
    """Empty pixels touching an occupied 4-neighbour, restricted to empty regions not touching the border."""
    empty = ~occ
    labels, n = ndimage.label(empty)
    border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    enclosed = empty & ~np.isin(labels, border)
    near_occ = ndimage.binary_dilation(occ, np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool))
    return enclosed & near_occ


def circle_support(boundary_dist: np.ndarray, cx: float, cy: float, r: float, tol: float = 1.0) -> float:
    """Fraction of circle samples within ``tol`` px of a boundary pixel centre."""
    n = max(16, int(round(2 * math.pi * r)))
    ang = 2 * math.pi * np.arange(n) / n
    xs = cx + r * np.cos(ang)
    ys = cy + r * np.sin(ang)
    H, W = boundary_dist.shape
    ci = np.floor(xs).astype(int)
    ri = np.floor(ys).astype(int)
    ok = (ci >= 0) & (ci < W) & (ri >= 0) & (ri < H)
    vals = np.full(n, np.inf)
    vals[ok] = boundary_dist[ri[ok], ci[ok]]
    return float(np.mean(vals <= tol))


def _interior_empty(occ: np.ndarray, cx: float, cy: float, r: float) -> float:
    """Fraction of empty pixels whose centres lie within ``r`` of (cx, cy)."""
    H, W = occ.shape
    r = max(r, 1.0)
    x0, x1 = max(0, int(cx - r - 1)), min(W, int(cx + r + 2))
    y0, y1 = max(0, int(cy - r - 1)), min(H, int(cy + r + 2))
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r
    if not inside.any():
        return 0.0
    return float(np.mean(~occ[y0:y1, x0:x1][inside]))


def detect_circles(image: RasterPlaneImage | np.ndarray, r_min: int, r_max: int, min_score: float = 0.6,
                   tol: float = 1.0, min_interior: float = 0.9) -> list[Circle]:
    """Circular Hough transform over the boundary of enclosed empty regions.

    Candidate centres must be empty pixels. A candidate's score is the fraction
    of its circumference lying within ``tol`` px of the boundary; candidates
    whose disk interior is not essentially empty are dropped.
    """
    if r_min < 2:
        raise ValueError("r_min must be >= 2")
    occ = image.occupancy if isinstance(image, RasterPlaneImage) else np.asarray(image, dtype=bool)
    H, W = occ.shape
    bnd = enclosed_boundary(occ)
    by, bx = np.nonzero(bnd)
    if by.size == 0:
        return []
    # distance (px) from each pixel centre to the nearest boundary pixel centre
    bdist = ndimage.distance_transform_edt(~bnd)
    empty = ~occ
    found: list[Circle] = []
    for r in range(int(r_min), int(r_max) + 1):
        n = max(16, int(round(2 * math.pi * r)))
        ang = 2 * math.pi * np.arange(n) / n
        dx = np.round(r * np.cos(ang)).astype(np.int64)
        dy = np.round(r * np.sin(ang)).astype(np.int64)
        offs = np.unique(np.stack([dx, dy], 1), axis=0)
        cx = (bx[:, None] + offs[None, :, 0]).ravel()
        cy = (by[:, None] + offs[None, :, 1]).ravel()
        ok = (cx >= 0) & (cx < W) & (cy >= 0) & (cy < H)
        acc = np.zeros((H, W), dtype=np.int32)
        np.add.at(acc, (cy[ok], cx[ok]), 1)
        acc[~empty] = 0
        need = 0.5 * min_score * offs.shape[0]
        peaks = (acc >= need) & (acc == ndimage.maximum_filter(acc, size=3))
        for y, x in zip(*np.nonzero(peaks)):
            # the pixel centre is at (x + 0.5, y + 0.5) in continuous coordinates
            s = circle_support(bdist, x + 0.5, y + 0.5, r, tol)
            if s >= min_score and _interior_empty(occ, x + 0.5, y + 0.5, r - 1.5) >= min_interior:
                found.append(Circle((x + 0.5, y + 0.5), float(r), s))
    found.sort(key=lambda c: (-c.score, -c.radius, c.center[1], c.center[0]))
    kept: list[Circle] = []
    for c in found:
        if all(math.hypot(c.center[0] - k.center[0], c.center[1] - k.center[1]) > r_min for k in kept):
            kept.append(c)
    return kept


def _largest_empty_circle(pts2: np.ndarray, c0: np.ndarray, r0: float) -> tuple[np.ndarray, float]:
    """Maximize the distance from a centre to its nearest in-plane point, starting at ``c0``."""
    d0 = np.linalg.norm(pts2 - c0, axis=1)
    near = pts2[d0 <= 2.0 * r0 + 0.05]
    if near.shape[0] < 8:
        return c0, r0

    def neg_clearance(c):
        return -float(np.min(np.linalg.norm(near - c, axis=1)))

    res = optimize.minimize(neg_clearance, c0, method="Nelder-Mead",
                            options=dict(xatol=1e-5, fatol=1e-6, maxiter=400, initial_simplex=np.array(
                                [c0, c0 + [0.3 * r0, 0.0], c0 + [0.0, 0.3 * r0]])))
    c = res.x
    if np.linalg.norm(c - c0) > r0:
        return c0, r0
    return c, -float(res.fun)


def detect_holes(cloud: PointCloud, sensor_pose: Pose = Pose(), params: HoleParams = HoleParams(),
                 timestamp: float = 0.0) -> list[HoleDetection]:
    """Full opening detector. ``cloud`` is in the sensor frame; results are in ``sensor_pose``'s parent frame."""
    pts = cloud.points
    if params.max_range is not None and pts.shape[0]:
        pts = pts[np.linalg.norm(pts, axis=1) <= params.max_range]
    if params.forward_fov_deg is not None and pts.shape[0]:
        half = math.radians(params.forward_fov_deg) / 2
        pts = pts[np.abs(np.arctan2(pts[:, 1], pts[:, 0])) <= half]
    if pts.shape[0] < params.min_inliers:
        return []
    world = sensor_pose.apply(pts)
    sensor = sensor_pose.translation
    planes = fit_planes_ransac(world, params.max_planes, params.ransac_threshold, params.min_inliers,
                               params.ransac_iterations, params.seed)
    r_px = 0.5 * params.min_diameter / params.resolution
    R_px = 0.5 * params.max_diameter / params.resolution
    r_min = max(2, int(math.floor(r_px)) - 1)
    r_max = int(math.ceil(R_px)) + 1
    out: list[HoleDetection] = []
    for plane in planes:
        plane = plane.facing(sensor)
        try:
            raster = rasterize_plane(plane, world, params.resolution)
        except DegenerateInputError:
            continue
        if raster.occupancy.size > params.max_raster_pixels:
            continue
        closed = close_gaps(raster, params.close_radius)
        circles = detect_circles(closed, r_min, r_max, params.min_score)
        if not circles:
            continue
        inl = world[plane.inlier_indices]
        d = inl - raster.origin
        pts2 = np.stack([d @ raster.axis_u, d @ raster.axis_v], axis=1)
        for c in circles:
            c2 = np.array(c.center) * params.resolution
            rad = c.radius * params.resolution
            if params.refine:
                c2, rad = _largest_empty_circle(pts2, c2, rad)
            diameter = 2.0 * rad
            if not (params.min_diameter <= diameter <= params.max_diameter):
                continue
            center = raster.origin + c2[0] * raster.axis_u + c2[1] * raster.axis_v
            # several Hough radii can refine onto the same opening; keep the best scored one
            if any(o.support_plane is plane and np.linalg.norm(o.position - center) < 0.5 * params.min_diameter
                   for o in out):
                continue
            out.append(HoleDetection(center, plane.normal.copy(), diameter, plane, c.score, timestamp))
    out.sort(key=lambda h: -h.score)
    return out
