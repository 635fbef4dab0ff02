"""Generative point cloud registration toolkit.

Pipeline: point clouds -> depth maps -> coupled depth-conditioned image
generation -> geometric-color descriptor fusion -> correspondence
estimation -> robust rigid pose recovery.
"""

from .core import CameraIntrinsics, PointCloud, RigidTransform, apply, compose, invert

__all__ = [
    "CameraIntrinsics",
    "PointCloud",
    "RigidTransform",
    "apply",
    "compose",
    "invert",
]

__version__ = "0.1.0"
