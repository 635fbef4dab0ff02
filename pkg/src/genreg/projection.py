"""Point cloud <-> depth map conversion and image-space lifting.

Depth maps use 0.0 as the invalid-pixel sentinel; valid depths are positive
camera-frame z in meters. Projection uses nearest-pixel rounding.
"""

from dataclasses import dataclass

import numpy as np

from .base import check_array
from .core import CameraIntrinsics, PointCloud, RigidTransform

NEAR_PLANE = 0.01
OCCLUSION_TOL = 0.05


class EmptyDepthError(ValueError):
    """Raised when rendering or back-projection has no valid pixels."""


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters, row-major (height, width), 0 = no measurement."""

    depths: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        depths = check_array(self.depths, "depths", shape=(None, None))
        if depths.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth shape {depths.shape} does not match intrinsics "
                f"({self.intrinsics.height}, {self.intrinsics.width})"
            )
        if np.any(depths < 0):
            raise ValueError("depths must be non-negative (0 = invalid)")
        depths.flags.writeable = False
        object.__setattr__(self, "depths", depths)

    @property
    def width(self):
        return self.intrinsics.width

    @property
    def height(self):
        return self.intrinsics.height

    @property
    def valid_mask(self):
        return self.depths > 0


@dataclass(frozen=True)
class CoupledDepth:
    """Vertical stack of the source (top) and target (bottom) depth maps."""

    top: DepthMap
    bottom: DepthMap

    def __post_init__(self):
        if (self.top.height, self.top.width) != (self.bottom.height, self.bottom.width):
            raise ValueError(
                f"coupled halves must share dimensions, got "
                f"{(self.top.height, self.top.width)} vs {(self.bottom.height, self.bottom.width)}"
            )

    def stacked(self):
        return np.vstack([self.top.depths, self.bottom.depths])


def couple_depths(src: DepthMap, tgt: DepthMap) -> CoupledDepth:
    return CoupledDepth(src, tgt)


def split_coupled(coupled: CoupledDepth):
    return coupled.top, coupled.bottom


def _project(points, intr, view):
    """Camera-frame coords and rounded pixel indices for every point."""
    cam = view.transform_points(points)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.rint(intr.fx * cam[:, 0] / z + intr.cx).astype(np.int64)
        v = np.rint(intr.fy * cam[:, 1] / z + intr.cy).astype(np.int64)
    return cam, u, v, z


def render_depth(cloud, intr, view=None, splat_radius=1):
    """Z-buffered depth render: each pixel keeps the smallest camera z.

    Points splat to a square of the given pixel radius so sparse clouds do
    not leave holes at desk-scale densities.
    """
    if view is None:
        view = RigidTransform.identity()
    if len(cloud) == 0:
        raise EmptyDepthError("cannot render an empty cloud")
    _, u, v, z = _project(cloud.points, intr, view)
    keep = z > NEAR_PLANE
    depth = np.full((intr.height, intr.width), np.inf)
    for du in range(-splat_radius, splat_radius + 1):
        for dv in range(-splat_radius, splat_radius + 1):
            uu, vv = u[keep] + du, v[keep] + dv
            ok = (uu >= 0) & (uu < intr.width) & (vv >= 0) & (vv < intr.height)
            np.minimum.at(depth, (vv[ok], uu[ok]), z[keep][ok])
    valid = np.isfinite(depth)
    if not valid.any():
        raise EmptyDepthError("all points culled; empty depth map")
    depth[~valid] = 0.0
    return DepthMap(depth, intr)


def backproject(depth: DepthMap) -> PointCloud:
    """Camera-frame points for every valid pixel (inverse pinhole)."""
    mask = depth.valid_mask
    if not mask.any():
        raise EmptyDepthError("depth map has no valid pixels")
    v, u = np.nonzero(mask)
    z = depth.depths[v, u]
    intr = depth.intrinsics
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return PointCloud(np.column_stack([x, y, z]))


def _bilinear(grid, x, y):
    """Sample grid (H, W, d) at continuous (x, y), clamped to the border."""
    h, w = grid.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
    bot = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _visible(cam, u, v, z, depth):
    """Points that project in-bounds, in front, and pass the occlusion z-test."""
    intr = depth.intrinsics
    ok = (z > NEAR_PLANE) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    vis = np.zeros(len(z), dtype=bool)
    idx = np.nonzero(ok)[0]
    d = depth.depths[v[idx], u[idx]]
    vis[idx] = (d > 0) & (np.abs(z[idx] - d) <= OCCLUSION_TOL)
    return vis


def lift_features(grid, depth, cloud, view=None):
    """Sample an image-space feature grid at each point's projection.

    The grid may be coarser than the depth image; pixel coordinates are
    rescaled by the grid/image ratio and bilinearly sampled. Occluded or
    out-of-bounds points get the zero vector and a False visibility flag.

    Returns (features, visible) with one row per point.
    """
    if view is None:
        view = RigidTransform.identity()
    grid = check_array(grid, "feature grid", shape=(None, None, None))
    intr = depth.intrinsics
    cam = view.transform_points(cloud.points)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uf = intr.fx * cam[:, 0] / z + intr.cx
        vf = intr.fy * cam[:, 1] / z + intr.cy
    u = np.rint(np.where(np.isfinite(uf), uf, -1)).astype(np.int64)
    v = np.rint(np.where(np.isfinite(vf), vf, -1)).astype(np.int64)
    vis = _visible(cam, u, v, z, depth)
    feats = np.zeros((len(cloud), grid.shape[2]))
    if vis.any():
        gh, gw = grid.shape[:2]
        gx = uf[vis] * (gw / intr.width)
        gy = vf[vis] * (gh / intr.height)
        feats[vis] = _bilinear(grid, gx, gy)
    return feats, vis


def colorize(cloud, image, depth, view=None):
    """Attach colors bilinearly sampled from an RGB image at projected pixels.

    Occluded points are colored (0,0,0); their flags come back False.
    Returns (colored cloud, visible mask).
    """
    image = check_array(image, "image", shape=(None, None, 3))
    if image.shape[:2] != (depth.height, depth.width):
        raise ValueError(f"image shape {image.shape[:2]} does not match depth "
                         f"({depth.height}, {depth.width})")
    colors, vis = lift_features(image, depth, cloud, view)
    colors = np.clip(colors, 0.0, 1.0)
    return PointCloud(cloud.points, colors=colors, normals=cloud.normals), vis
