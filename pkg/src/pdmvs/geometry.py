"""Projective primitives: plane homographies, epipolar lines, reprojection.

Plane hypotheses are parameterized as (n, d): a unit normal in the
reference camera frame plus the depth of the owning pixel. The induced
plane constant is n . (d * K^-1 p), so the same hypothesis describes a
single 3D plane shared by the whole patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene_io import CameraModel, DepthMapBuffer

UNVERIFIABLE = float("inf")


class GeometryError(Exception):
    pass


class BehindCameraError(GeometryError):
    pass


class DegenerateHomographyError(GeometryError):
    pass


class NoEpipolarGeometryError(GeometryError):
    pass


class NoDepthSolutionError(GeometryError):
    pass


@dataclass
class PlaneHypothesis:
    """Unit normal (reference camera frame) + depth at the owning pixel."""

    n: np.ndarray
    d: float

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=np.float64).reshape(3)
        self.d = float(self.d)


@dataclass
class EpipolarLine:
    """ax + by + c = 0 with a^2 + b^2 = 1; direction points along the
    line in the sense of decreasing depth on the reference ray, so a
    positive offset from the mapped pixel corresponds to growing
    disparity."""

    a: float
    b: float
    c: float
    direction: np.ndarray

    def distance(self, pixel) -> float:
        x, y = float(pixel[0]), float(pixel[1])
        return abs(self.a * x + self.b * y + self.c)


def _homog(p) -> np.ndarray:
    return np.array([float(p[0]), float(p[1]), 1.0])


def project_point(cam: CameraModel, X) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel, depth in the camera)."""
    Xc = cam.R @ np.asarray(X, dtype=np.float64) + cam.T
    if Xc[2] <= 0:
        raise BehindCameraError(f"point at depth {Xc[2]:.4g} behind camera")
    u = cam.K @ Xc
    return u[:2] / u[2], float(Xc[2])


def unproject(cam: CameraModel, pixel, depth: float) -> np.ndarray:
    """World point of a pixel at a given camera depth."""
    ray = np.linalg.solve(cam.K, _homog(pixel))
    Xc = ray * (depth / ray[2])
    return cam.R.T @ (Xc - cam.T)


def relative_pose(cam_i: CameraModel, cam_j: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """(R_rel, t_rel) with X_j = R_rel X_i + t_rel for camera-frame points."""
    R_rel = cam_j.R @ cam_i.R.T
    t_rel = cam_j.T - R_rel @ cam_i.T
    return R_rel, t_rel


def plane_homography(
    cam_i: CameraModel, cam_j: CameraModel, p, hyp: PlaneHypothesis
) -> np.ndarray:
    """3x3 homography mapping reference pixels on the hypothesis plane
    into the source image."""
    Kinv = np.linalg.inv(cam_i.K)
    Xp = hyp.d * (Kinv @ _homog(p))
    dist = float(hyp.n @ Xp)
    if abs(dist) < 1e-12 * hyp.d:
        raise DegenerateHomographyError("plane through the camera center")
    R_rel, t_rel = relative_pose(cam_i, cam_j)
    H = cam_j.K @ (R_rel + np.outer(t_rel, hyp.n) / dist) @ Kinv
    return H


def reprojection_error(
    p,
    depth_i: float,
    cam_i: CameraModel,
    cam_j: CameraModel,
    depth_map_j: DepthMapBuffer,
) -> float:
    """Forward-backward projection error ||p' - p|| in pixels.

    Returns UNVERIFIABLE when the forward projection leaves the source
    image or lands on an invalid depth.
    """
    X = unproject(cam_i, p, depth_i)
    try:
        p_j, _ = project_point(cam_j, X)
    except BehindCameraError:
        return UNVERIFIABLE
    xj = int(round(p_j[0]))
    yj = int(round(p_j[1]))
    if not (0 <= xj < cam_j.width and 0 <= yj < cam_j.height):
        return UNVERIFIABLE
    if not depth_map_j.valid[yj, xj]:
        return UNVERIFIABLE
    d_j = float(depth_map_j.values[yj, xj])
    X_back = unproject(cam_j, p_j, d_j)
    try:
        p_prime, _ = project_point(cam_i, X_back)
    except BehindCameraError:
        return UNVERIFIABLE
    return float(np.hypot(p_prime[0] - p[0], p_prime[1] - p[1]))


def epipolar_line(cam_i: CameraModel, cam_j: CameraModel, p) -> EpipolarLine:
    """Locus in cam_j of the viewing ray through p in cam_i."""
    baseline = np.linalg.norm(cam_j.center - cam_i.center)
    if baseline < 1e-12:
        raise NoEpipolarGeometryError("identical camera centers")
    ray = np.linalg.solve(cam_i.K, _homog(p))
    R_rel, t_rel = relative_pose(cam_i, cam_j)
    # two points on the line: projections at depths 1 and 2 along the ray
    u1 = cam_j.K @ (R_rel @ ray + t_rel)
    u2 = cam_j.K @ (R_rel @ (2.0 * ray) + t_rel)
    line = np.cross(u1, u2)
    norm = np.hypot(line[0], line[1])
    if norm < 1e-12:
        raise NoEpipolarGeometryError("degenerate epipolar line")
    line = line / norm
    q1 = u1[:2] / u1[2]
    q2 = u2[:2] / u2[2]
    direction = q1 - q2
    dnorm = np.linalg.norm(direction)
    if dnorm < 1e-12:
        raise NoEpipolarGeometryError("zero motion along epipolar line")
    return EpipolarLine(float(line[0]), float(line[1]), float(line[2]), direction / dnorm)


def depth_from_epipolar_offset(
    cam_i: CameraModel, cam_j: CameraModel, p, d: float, offset: float
) -> float:
    """Depth along the ray of p whose projection lands ``offset`` pixels
    from the mapped pixel of (p, d) along the epipolar line direction."""
    ray = np.linalg.solve(cam_i.K, _homog(p))
    R_rel, t_rel = relative_pose(cam_i, cam_j)
    A = cam_j.K @ (R_rel @ ray)
    B = cam_j.K @ t_rel
    u = d * A + B
    if u[2] <= 0:
        raise NoDepthSolutionError("mapped pixel behind source camera")
    p_j = u[:2] / u[2]
    line = epipolar_line(cam_i, cam_j, p)
    target = p_j + offset * line.direction
    # solve (d' A + B) ~ target in homogeneous coordinates
    den_x = A[0] - target[0] * A[2]
    den_y = A[1] - target[1] * A[2]
    if abs(den_x) >= abs(den_y):
        den, num = den_x, target[0] * B[2] - B[0]
    else:
        den, num = den_y, target[1] * B[2] - B[1]
    if abs(den) < 1e-15:
        raise NoDepthSolutionError("offset point at infinity along the ray")
    d_new = num / den
    if d_new <= 0:
        raise NoDepthSolutionError("no positive-depth solution for offset")
    return float(d_new)
