"""Procedural ground truth: textured box-room scenes, camera view pairs at
controlled overlap, ray-cast depth/color renders, and the diffusion
training corpus.

Scenes are axis-aligned rectangles (room walls seen from inside plus box
faces), so per-pixel ray casting is exact: depth, color, and the world
point behind every pixel agree analytically. Clouds handed to the
registration pipeline are back-projections of the rendered depths.
"""

from dataclasses import dataclass, field

import numpy as np

from .base import seeded_rng
from .core import CameraIntrinsics, PointCloud, RigidTransform, compose, invert
from .matching import CorrespondenceSet
from .projection import DepthMap

GRID_CELL = 0.01  # world-coordinate hash cell for overlap/correspondences


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    extents: tuple = (4.0, 4.0, 3.0)       # room size in meters (x, y, z)
    n_boxes: int = 4
    box_size: tuple = (0.4, 1.0)           # min/max edge length
    density: float = 400.0                 # surface sample points per m^2
    repetitive: bool = False               # identical box geometry, distinct textures

    def __post_init__(self):
        if min(self.extents) <= 0:
            raise ValueError("room extents must be positive")
        if self.density <= 0:
            raise ValueError("density must be positive")


@dataclass(frozen=True)
class ViewPairSpec:
    overlap: float = 0.5                   # target ratio in (0, 1]
    overlap_tol: float = 0.05
    baseline: float = 1.0                  # max translation between cameras (m)
    rotation: float = 0.5                  # max relative rotation (rad)
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(64.0, 64.0, 32.0, 32.0, 64, 64)
    )

    def __post_init__(self):
        if not 0.0 < self.overlap <= 1.0:
            raise ValueError("overlap target must be in (0, 1]")


def _hash_cells(cells):
    """Deterministic integer hash of (n, 2) int64 cell coordinates."""
    c = cells.astype(np.uint64)
    with np.errstate(over="ignore"):
        h = c[:, 0] * np.uint64(0x9E3779B97F4A7C15) + c[:, 1] * np.uint64(0xC2B2AE3D27D4EB4F)
        h ^= h >> np.uint64(29)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(32)
    return (h >> np.uint64(1)).astype(np.int64)


@dataclass(frozen=True)
class Texture:
    """Procedural surface texture: checker, stripe, or cell-noise pattern."""

    kind: str
    colors: np.ndarray          # (k, 3) palette
    scale: float
    salt: int

    def __call__(self, a, b):
        ca = np.floor(np.asarray(a) / self.scale).astype(np.int64)
        cb = np.floor(np.asarray(b) / self.scale).astype(np.int64)
        if self.kind == "checker":
            idx = (ca + cb) % 2
        elif self.kind == "stripe":
            idx = ca % 2
        else:  # noise
            idx = np.abs(_hash_cells(np.stack([ca + self.salt, cb], axis=-1).reshape(-1, 2))
                         ).reshape(ca.shape) % len(self.colors)
        return self.colors[idx]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle: fixed coordinate on one axis."""

    axis: int                   # 0, 1, or 2
    coord: float
    lo: np.ndarray              # bounds on the two free axes
    hi: np.ndarray
    texture: Texture

    @property
    def free_axes(self):
        return [a for a in range(3) if a != self.axis]

    @property
    def area(self):
        span = self.hi - self.lo
        return float(span[0] * span[1])


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    rects: tuple

    def raycast(self, origins, dirs):
        """Nearest-hit query for rays (n, 3); dirs need not be unit length.

        Returns (t, color, hit_mask); t is the ray parameter of the hit.
        """
        n = len(dirs)
        best_t = np.full(n, np.inf)
        color = np.zeros((n, 3))
        for rect in self.rects:
            i, j = rect.free_axes
            dk = dirs[:, rect.axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (rect.coord - origins[:, rect.axis]) / dk
            pi = origins[:, i] + t * dirs[:, i]
            pj = origins[:, j] + t * dirs[:, j]
            hit = (
                (np.abs(dk) > 1e-12) & (t > 1e-6) & (t < best_t)
                & (pi >= rect.lo[0]) & (pi <= rect.hi[0])
                & (pj >= rect.lo[1]) & (pj <= rect.hi[1])
            )
            if hit.any():
                best_t[hit] = t[hit]
                color[hit] = rect.texture(pi[hit] - rect.lo[0], pj[hit] - rect.lo[1])
        return best_t, color, np.isfinite(best_t)

    def sample_points(self, rng=None):
        """Stratified surface samples with exact ground-truth colors.

        Each rectangle gets exactly round(area * density) points on a
        jittered grid, so the total count is deterministic.
        """
        rng = rng or seeded_rng(self.spec.seed, 0x5A)
        pts, cols = [], []
        for rect in self.rects:
            count = int(round(rect.area * self.spec.density))
            if count == 0:
                continue
            span = rect.hi - rect.lo
            na = max(1, int(round(np.sqrt(count * span[0] / span[1]))))
            nb = max(1, int(round(count / na)))
            ga, gb = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
            ua = (ga.ravel() + rng.random(na * nb)) / na * span[0]
            ub = (gb.ravel() + rng.random(na * nb)) / nb * span[1]
            p = np.zeros((na * nb, 3))
            i, j = rect.free_axes
            p[:, rect.axis] = rect.coord
            p[:, i] = rect.lo[0] + ua
            p[:, j] = rect.lo[1] + ub
            pts.append(p)
            cols.append(rect.texture(ua, ub))
        points = np.vstack(pts)
        colors = np.clip(np.vstack(cols), 0.0, 1.0)
        return PointCloud(points, colors=colors)


_PATTERNS = ("checker", "stripe", "noise")


def _make_texture(rng, scale_range=(0.15, 0.45)):
    kind = _PATTERNS[rng.integers(0, len(_PATTERNS))]
    k = 4 if kind == "noise" else 2
    colors = rng.random((k, 3)) * 0.9 + 0.05
    scale = float(rng.uniform(*scale_range))
    return Texture(kind, colors, scale, int(rng.integers(0, 1 << 16)))


def _box_rects(center, size, rng):
    rects = []
    for axis in range(3):
        i, j = [a for a in range(3) if a != axis]
        for sign in (-1.0, 1.0):
            rects.append(Rect(
                axis=axis,
                coord=center[axis] + sign * size[axis] / 2.0,
                lo=np.array([center[i] - size[i] / 2.0, center[j] - size[j] / 2.0]),
                hi=np.array([center[i] + size[i] / 2.0, center[j] + size[j] / 2.0]),
                texture=_make_texture(rng),
            ))
    return rects


def make_scene(spec: SceneSpec) -> Scene:
    """Axis-aligned room with textured boxes; deterministic per seed."""
    rng = seeded_rng(spec.seed, 0x5CE)
    ex, ey, ez = spec.extents
    rects = []
    # room interior: six walls
    for axis, extent in enumerate(spec.extents):
        i, j = [a for a in range(3) if a != axis]
        lims = [spec.extents[i], spec.extents[j]]
        for coord in (0.0, extent):
            rects.append(Rect(
                axis=axis, coord=coord,
                lo=np.zeros(2), hi=np.array(lims),
                texture=_make_texture(rng, scale_range=(0.3, 0.8)),
            ))
    if spec.repetitive and spec.n_boxes > 0:
        size = rng.uniform(*spec.box_size, size=3)
        sizes = [size] * spec.n_boxes
    else:
        sizes = [rng.uniform(*spec.box_size, size=3) for _ in range(spec.n_boxes)]
    for size in sizes:
        margin = max(size) / 2.0 + 0.1
        center = np.array([
            rng.uniform(margin, ex - margin),
            rng.uniform(margin, ey - margin),
            rng.uniform(size[2] / 2.0, min(1.5, ez - margin)),
        ])
        rects.extend(_box_rects(center, size, rng))
    return Scene(spec, tuple(rects))


# -------------------------------------------------------------- cameras

def look_at(position, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera transform: +z forward, +x right, +y down."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r_wc = np.stack([right, down, forward])       # rows = camera axes
    return RigidTransform(r_wc, -r_wc @ position)


def render_view(scene: Scene, view: RigidTransform, intr: CameraIntrinsics):
    """Exact ray-cast depth and color images for one camera."""
    u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    dirs_cam = np.stack([
        (u.ravel() - intr.cx) / intr.fx,
        (v.ravel() - intr.cy) / intr.fy,
        np.ones(intr.width * intr.height),
    ], axis=1)
    cam_to_world = invert(view)
    dirs_world = dirs_cam @ cam_to_world.rotation.T
    origins = np.broadcast_to(cam_to_world.translation, dirs_world.shape)
    t, color, hit = scene.raycast(origins, dirs_world)
    depth = np.where(hit, t, 0.0).reshape(intr.height, intr.width)
    image = np.clip(color.reshape(intr.height, intr.width, 3), 0.0, 1.0)
    image[depth == 0] = 0.0
    return DepthMap(depth, intr), image


def _world_keys(depth: DepthMap, view: RigidTransform):
    """Packed 1 cm grid keys of the world points behind valid pixels."""
    from .projection import backproject

    cloud = backproject(depth)
    world = invert(view).transform_points(cloud.points)
    cells = np.floor(world / GRID_CELL).astype(np.int64) + np.int64(1 << 20)
    return (cells[:, 0] << np.int64(42)) | (cells[:, 1] << np.int64(21)) | cells[:, 2]


def overlap_ratio(depth_p, view_p, depth_q, view_q):
    keys_p = _world_keys(depth_p, view_p)
    keys_q = _world_keys(depth_q, view_q)
    common = np.intersect1d(np.unique(keys_p), np.unique(keys_q))
    denom = min(len(np.unique(keys_p)), len(np.unique(keys_q)))
    return len(common) / denom


@dataclass(frozen=True)
class ViewPair:
    """Everything the pipeline and its oracles need for one pair."""

    cloud_p: PointCloud         # camera-P frame, GT colors attached
    cloud_q: PointCloud
    transform_gt: RigidTransform  # maps P-frame points into Q-frame
    depth_p: DepthMap
    depth_q: DepthMap
    image_p: np.ndarray
    image_q: np.ndarray
    view_p: RigidTransform      # world -> camera
    view_q: RigidTransform
    overlap: float

    def gt_correspondences(self) -> CorrespondenceSet:
        """Index pairs whose world points share a 1 cm grid cell."""
        keys_p = _world_keys(self.depth_p, self.view_p)
        keys_q = _world_keys(self.depth_q, self.view_q)
        order_q = np.argsort(keys_q, kind="stable")
        sorted_q = keys_q[order_q]
        pos = np.searchsorted(sorted_q, keys_p)
        pos = np.clip(pos, 0, len(sorted_q) - 1)
        found = sorted_q[pos] == keys_p
        return CorrespondenceSet(np.nonzero(found)[0], order_q[pos[found]])


def _sample_pose(scene, rng):
    ex, ey, ez = scene.spec.extents
    position = np.array([
        rng.uniform(0.25 * ex, 0.75 * ex),
        rng.uniform(0.25 * ey, 0.75 * ey),
        rng.uniform(0.4 * ez, 0.7 * ez),
    ])
    target = np.array([
        rng.uniform(0.2 * ex, 0.8 * ex),
        rng.uniform(0.2 * ey, 0.8 * ey),
        rng.uniform(0.2 * ez, 0.6 * ez),
    ])
    while np.linalg.norm(target - position) < 0.5:
        target = position + rng.standard_normal(3)
    return position, target


def make_view_pair(scene: Scene, spec: ViewPairSpec, seed=0) -> ViewPair:
    """Camera pair at the requested overlap (within tolerance), with GT.

    The second camera interpolates a random pose offset; a bisection over
    the offset magnitude lands the overlap inside the tolerance band.
    Raises if no attempt reaches the band.
    """
    from .projection import backproject

    rng = seeded_rng(scene.spec.seed, seed, 0xF1)
    intr = spec.intrinsics
    for _ in range(50):
        pos_p, target_p = _sample_pose(scene, rng)
        view_p = look_at(pos_p, target_p)
        depth_p, image_p = render_view(scene, view_p, intr)
        if depth_p.valid_mask.mean() < 0.5:
            continue
        offset = rng.uniform(-1.0, 1.0, size=3)
        offset = offset / max(np.linalg.norm(offset), 1e-9) * spec.baseline
        target_offset = rng.uniform(-1.0, 1.0, size=3) * spec.rotation * 2.0

        def pose_at(s):
            pos = pos_p + s * offset
            ex, ey, ez = scene.spec.extents
            pos = np.clip(pos, [0.15 * ex, 0.15 * ey, 0.2 * ez],
                          [0.85 * ex, 0.85 * ey, 0.8 * ez])
            return look_at(pos, target_p + s * target_offset)

        def overlap_at(s):
            view_q = pose_at(s)
            depth_q, image_q = render_view(scene, view_q, intr)
            ov = overlap_ratio(depth_p, view_p, depth_q, view_q)
            return ov, view_q, depth_q, image_q

        if spec.overlap >= 0.999:
            view_q, depth_q, image_q = view_p, depth_p, image_p
            achieved = 1.0
        else:
            # overlap decreases (roughly) with the offset magnitude s; bisect
            achieved, view_q, depth_q, image_q = overlap_at(1.0)
            lo, hi = 0.0, 1.0
            for _ in range(20):
                if abs(achieved - spec.overlap) <= spec.overlap_tol:
                    break
                if achieved > spec.overlap:
                    lo = (lo + hi) / 2.0
                else:
                    hi = (lo + hi) / 2.0
                achieved, view_q, depth_q, image_q = overlap_at((lo + hi) / 2.0)
        if abs(achieved - spec.overlap) <= spec.overlap_tol:
            cloud_p = backproject(depth_p)
            cloud_q = backproject(depth_q)
            mask_p = depth_p.valid_mask
            mask_q = depth_q.valid_mask
            cloud_p = PointCloud(cloud_p.points, colors=image_p[mask_p])
            cloud_q = PointCloud(cloud_q.points, colors=image_q[mask_q])
            t_gt = compose(view_q, invert(view_p))
            return ViewPair(cloud_p, cloud_q, t_gt, depth_p, depth_q,
                            image_p, image_q, view_p, view_q, achieved)
    raise RuntimeError(
        f"could not reach overlap {spec.overlap} +/- {spec.overlap_tol}"
    )


def make_training_corpus(n_pairs, scene_spec: SceneSpec, pair_spec: ViewPairSpec, seed=0):
    """Coupled (image, depth) stacks for diffusion training.

    Item i comes from its own scene (seed + i), so palettes vary across
    the corpus while halves within an item stay texture-consistent.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    items = []
    for i in range(n_pairs):
        scene = make_scene(SceneSpec(
            seed=scene_spec.seed + i,
            extents=scene_spec.extents,
            n_boxes=scene_spec.n_boxes,
            box_size=scene_spec.box_size,
            density=scene_spec.density,
            repetitive=scene_spec.repetitive,
        ))
        pair = make_view_pair(scene, pair_spec, seed=seed)
        image = np.concatenate([pair.image_p, pair.image_q], axis=0)
        depth = np.concatenate([pair.depth_p.depths, pair.depth_q.depths], axis=0)
        items.append((image, depth))
    return items
