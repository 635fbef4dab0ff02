"""Geometric descriptors: normal estimation and FPFH (33-dim)."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .base import ParamsMixin, check_array
from .core import PointCloud

N_BINS = 11
FPFH_DIM = 3 * N_BINS


@dataclass(frozen=True)
class DescriptorSet:
    """Per-point feature rows aligned to a cloud's point order.

    visible is False for rows that carry no information (occluded points,
    isolated points); such rows are all-zero.
    """

    data: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        data = check_array(self.data, "descriptors", shape=(None, None))
        visible = np.asarray(self.visible, dtype=bool)
        if len(visible) != len(data):
            raise ValueError("visibility flags must match descriptor count")
        data.flags.writeable = False
        visible.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "visible", visible)

    @classmethod
    def from_array(cls, data, visible=None):
        data = np.asarray(data, dtype=np.float64)
        if visible is None:
            visible = np.ones(len(data), dtype=bool)
        return cls(data, visible)

    @property
    def dim(self):
        return self.data.shape[1]

    def __len__(self):
        return len(self.data)


def median_nn_spacing(points):
    """Median distance to the nearest neighbor; the cloud's natural scale."""
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    return float(np.median(d[:, 1]))


def estimate_normals(cloud, k=10, viewpoint=(0.0, 0.0, 0.0)):
    """Per-point normals from the smallest covariance eigenvector of the
    k-nearest neighborhood, oriented towards the viewpoint.

    Degenerate neighborhoods (zero covariance) get normal (0,0,1); the
    returned flags mark them.
    """
    pts = cloud.points
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(pts) < k + 1:
        raise ValueError(f"need at least {k + 1} points for k={k}")
    viewpoint = np.asarray(viewpoint, dtype=np.float64)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nbrs = pts[idx[:, 1:]]                       # (n, k, 3), self excluded
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]
    degenerate = eigvals[:, 2] < 1e-24
    normals[degenerate] = (0.0, 0.0, 1.0)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals /= norms
    flip = np.einsum("ni,ni->n", normals, viewpoint - pts) < 0
    normals[flip] *= -1.0
    return PointCloud(pts, colors=cloud.colors, normals=normals), degenerate


def _pair_features(p_src, n_src, p_tgt, n_tgt):
    """Darboux-frame angle features (alpha, phi, theta) of target vs source."""
    d = p_tgt - p_src
    dist = np.linalg.norm(d, axis=1)
    dist = np.where(dist > 0, dist, 1.0)
    dn = d / dist[:, None]
    u = n_src
    v = np.cross(dn, u)
    vn = np.linalg.norm(v, axis=1)
    vn = np.where(vn > 0, vn, 1.0)
    v = v / vn[:, None]
    w = np.cross(u, v)
    alpha = np.einsum("ni,ni->n", v, n_tgt)
    phi = np.einsum("ni,ni->n", u, dn)
    theta = np.arctan2(np.einsum("ni,ni->n", w, n_tgt), np.einsum("ni,ni->n", u, n_tgt))
    return alpha, phi, theta


def _spfh_histogram(alpha, phi, theta):
    """Three 11-bin counts concatenated to a 33-vector."""
    hist = np.zeros(FPFH_DIM)
    for off, (vals, lo, hi) in enumerate(
        [(alpha, -1.0, 1.0), (phi, -1.0, 1.0), (theta, -np.pi, np.pi)]
    ):
        bins = np.clip(((vals - lo) / (hi - lo) * N_BINS).astype(np.int64), 0, N_BINS - 1)
        np.add.at(hist, off * N_BINS + bins, 1.0)
    return hist


def fpfh(cloud, radius):
    """Fast Point Feature Histograms over radius neighborhoods.

    Each point's SPFH is distance-weight-averaged with its neighbors' and
    the result is L1-normalized. Points with no neighbors in the radius
    get a zero row and a False flag.
    """
    if cloud.normals is None:
        raise ValueError("fpfh requires normals; run estimate_normals first")
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts, nrm = cloud.points, cloud.normals
    n = len(pts)
    tree = cKDTree(pts)
    neighbor_lists = tree.query_ball_point(pts, radius)
    spfh = np.zeros((n, FPFH_DIM))
    neighbors = []
    for i, nbrs in enumerate(neighbor_lists):
        nbrs = np.array([j for j in nbrs if j != i], dtype=np.int64)
        neighbors.append(nbrs)
        if len(nbrs) == 0:
            continue
        a, p, t = _pair_features(
            np.broadcast_to(pts[i], (len(nbrs), 3)),
            np.broadcast_to(nrm[i], (len(nbrs), 3)),
            pts[nbrs],
            nrm[nbrs],
        )
        spfh[i] = _spfh_histogram(a, p, t)
    out = np.zeros((n, FPFH_DIM))
    visible = np.zeros(n, dtype=bool)
    for i, nbrs in enumerate(neighbors):
        if len(nbrs) == 0:
            continue
        visible[i] = True
        w = 1.0 / np.linalg.norm(pts[nbrs] - pts[i], axis=1)
        row = spfh[i] + (w[:, None] * spfh[nbrs]).sum(axis=0) / len(nbrs)
        out[i] = row / row.sum()
    return DescriptorSet(out, visible)


class NormalEstimator(ParamsMixin):
    """Estimator-style wrapper around estimate_normals."""

    def __init__(self, k=10, viewpoint=(0.0, 0.0, 0.0)):
        self.k = k
        self.viewpoint = viewpoint

    def fit(self, cloud=None):
        return self

    def transform(self, cloud):
        out, self.degenerate_ = estimate_normals(cloud, self.k, self.viewpoint)
        return out


class FpfhExtractor(ParamsMixin):
    """FPFH descriptor extraction with an automatic radius default.

    radius=None uses 2.5x the cloud's median nearest-neighbor spacing.
    """

    def __init__(self, radius=None, normal_k=10, viewpoint=(0.0, 0.0, 0.0)):
        self.radius = radius
        self.normal_k = normal_k
        self.viewpoint = viewpoint

    def fit(self, cloud=None):
        return self

    def transform(self, cloud):
        if cloud.normals is None:
            cloud, _ = estimate_normals(cloud, self.normal_k, self.viewpoint)
        radius = self.radius
        if radius is None:
            radius = 2.5 * median_nn_spacing(cloud.points)
        self.radius_ = radius
        return fpfh(cloud, radius)
