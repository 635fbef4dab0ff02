"""Geometry primitives: rigid transforms, point clouds, pinhole intrinsics.

All quantities are metric (meters). Containers validate eagerly and are
immutable after construction, so downstream code never re-checks geometry.
"""

from dataclasses import dataclass, field

import numpy as np

from .base import check_array, check_finite, check_points

_ORTHO_TOL = 1e-9


def _project_to_rotation(m):
    """Nearest rotation matrix in Frobenius norm (SVD projection)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1.0
        r = u @ vt
    return r


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = check_array(self.rotation, "rotation", shape=(3, 3))
        trans = check_array(self.translation, "translation", shape=(3,))
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        det = np.linalg.det(rot)
        if det < 0:
            raise ValueError(f"rotation has negative determinant {det:.6f} (reflection)")
        if err > _ORTHO_TOL or abs(det - 1.0) > _ORTHO_TOL:
            if err > 1e-3:
                raise ValueError(f"rotation not orthonormal (max deviation {err:.3e})")
            rot = _project_to_rotation(rot)
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, mat):
        mat = check_array(mat, "matrix", shape=(4, 4))
        return cls(mat[:3, :3], mat[:3, 3])

    def matrix(self):
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def transform_points(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class PointCloud:
    """3D points with optional per-point colors (RGB in [0,1]) and unit normals."""

    points: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = check_points(self.points)
        n = len(pts)
        colors = self.colors
        if colors is not None:
            colors = check_array(colors, "colors", shape=(n, 3))
            if colors.min() < 0.0 or colors.max() > 1.0:
                raise ValueError("colors must lie in [0, 1]")
            colors.flags.writeable = False
        normals = self.normals
        if normals is not None:
            normals = check_array(normals, "normals", shape=(n, 3))
            norms = np.linalg.norm(normals, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("normals must have unit norm")
            normals.flags.writeable = False
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "normals", normals)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths, principal point, image size (pixels)."""

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
            raise ValueError("principal point must lie inside the image")
        check_finite([self.fx, self.fy, self.cx, self.cy], "intrinsics")


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a∘b: apply b first, then a."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return RigidTransform(t.rotation.T, -t.rotation.T @ t.translation)


def apply(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Transform every point (and rotate normals); colors carry over."""
    normals = None if cloud.normals is None else cloud.normals @ t.rotation.T
    return PointCloud(t.transform_points(cloud.points), colors=cloud.colors, normals=normals)


def rotation_about_z(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about_x(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def random_rotation(rng):
    """Uniform random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, [0, 1]] = q[:, [1, 0]]
    return q
