"""Correspondence estimation and robust rigid pose computation."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .base import ParamsMixin, seeded_rng
from .core import PointCloud, RigidTransform, compose

MIN_SAMPLE = 3


class DegeneracyError(ValueError):
    """Correspondence configuration does not determine a rotation."""


@dataclass(frozen=True)
class CorrespondenceSet:
    """Putative (source index, target index) pairs with optional distances."""

    source: np.ndarray
    target: np.ndarray
    distances: np.ndarray | None = None

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.int64)
        tgt = np.asarray(self.target, dtype=np.int64)
        if src.shape != tgt.shape or src.ndim != 1:
            raise ValueError("source/target index arrays must be equal-length 1-D")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)
        if self.distances is not None:
            d = np.asarray(self.distances, dtype=np.float64)
            if d.shape != src.shape:
                raise ValueError("distances must match pair count")
            object.__setattr__(self, "distances", d)

    def __len__(self):
        return len(self.source)


def _nearest_rows(a, b, chunk=512):
    """For each row of a, index and distance of the L2-nearest row of b.

    Brute force with first-index tie-breaking (np.argmin takes the lowest
    index on equal values), chunked to bound memory.
    """
    bb = np.einsum("ij,ij->i", b, b)
    idx = np.empty(len(a), dtype=np.int64)
    dist = np.empty(len(a))
    for start in range(0, len(a), chunk):
        block = a[start:start + chunk]
        d2 = np.einsum("ij,ij->i", block, block)[:, None] + bb[None, :] - 2.0 * block @ b.T
        j = np.argmin(d2, axis=1)
        idx[start:start + len(block)] = j
        dist[start:start + len(block)] = np.sqrt(np.maximum(d2[np.arange(len(block)), j], 0.0))
    return idx, dist


def nn_correspondences(desc_p, desc_q, mutual=False) -> CorrespondenceSet:
    """Match each source descriptor row to its nearest target row.

    With mutual=True only mutually-nearest pairs survive.
    """
    if desc_p.dim != desc_q.dim:
        raise ValueError(f"descriptor dims differ: {desc_p.dim} vs {desc_q.dim}")
    if len(desc_p) == 0 or len(desc_q) == 0:
        raise ValueError("cannot match empty descriptor sets")
    fwd, dist = _nearest_rows(desc_p.data, desc_q.data)
    src = np.arange(len(desc_p))
    if mutual:
        bwd, _ = _nearest_rows(desc_q.data, desc_p.data)
        keep = bwd[fwd] == src
        return CorrespondenceSet(src[keep], fwd[keep], dist[keep])
    return CorrespondenceSet(src, fwd, dist)


def kabsch(corr, cloud_p, cloud_q, weights=None) -> RigidTransform:
    """Closed-form weighted least-squares rigid alignment (SVD with
    determinant correction)."""
    if len(corr) < MIN_SAMPLE:
        raise DegeneracyError(f"need at least {MIN_SAMPLE} correspondences, have {len(corr)}")
    p = cloud_p.points[corr.source]
    q = cloud_q.points[corr.target]
    if weights is None:
        w = np.full(len(p), 1.0 / len(p))
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
    cp = w @ p
    cq = w @ q
    h = (p - cp).T @ ((q - cq) * w[:, None])
    u, s, vt = np.linalg.svd(h)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise DegeneracyError("correspondences are (near-)collinear; rotation underdetermined")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d])
    rot = vt.T @ flip @ u.T
    return RigidTransform(rot, cq - rot @ cp)


def _sample_triples(rng, iters, n):
    """iters x 3 distinct index triples, vectorized rejection."""
    i1 = rng.integers(0, n, size=iters)
    i2 = rng.integers(0, n, size=iters)
    while True:
        bad = i2 == i1
        if not bad.any():
            break
        i2[bad] = rng.integers(0, n, size=int(bad.sum()))
    i3 = rng.integers(0, n, size=iters)
    while True:
        bad = (i3 == i1) | (i3 == i2)
        if not bad.any():
            break
        i3[bad] = rng.integers(0, n, size=int(bad.sum()))
    return np.stack([i1, i2, i3], axis=1)


def _batch_kabsch(p, q):
    """Rigid fits for stacked 3-point samples: p, q of shape (k, 3, 3)."""
    cp = p.mean(axis=1, keepdims=True)
    cq = q.mean(axis=1, keepdims=True)
    h = (p - cp).transpose(0, 2, 1) @ (q - cq)
    u, s, vt = np.linalg.svd(h)
    rot = vt.transpose(0, 2, 1) @ u.transpose(0, 2, 1)
    det = np.linalg.det(rot)
    vt = vt.copy()
    vt[:, 2, :] *= np.where(det < 0, -1.0, 1.0)[:, None]
    rot = vt.transpose(0, 2, 1) @ u.transpose(0, 2, 1)
    t = cq[:, 0, :] - (rot @ cp[:, 0, :, None])[:, :, 0]
    return rot, t


def ransac(corr, cloud_p, cloud_q, iters=50000, threshold=0.05, seed=0):
    """RANSAC over 3-point minimal samples, scored by inlier count.

    Ties go to the lower mean inlier residual, then the earlier iteration.
    The winning model is refit with kabsch on all of its inliers.
    Deterministic for a given seed. Returns (transform, inlier indices).
    """
    n = len(corr)
    if n < MIN_SAMPLE:
        raise DegeneracyError(f"need at least {MIN_SAMPLE} correspondences, have {n}")
    p = cloud_p.points[corr.source]
    q = cloud_q.points[corr.target]
    rng = seeded_rng(seed)
    triples = _sample_triples(rng, iters, n)
    best = None                      # (count, mean_resid, iter_index, inlier_mask)
    chunk = 8192
    thresh2 = threshold * threshold
    for start in range(0, iters, chunk):
        tri = triples[start:start + chunk]
        rot, t = _batch_kabsch(p[tri], q[tri])
        moved = rot @ p.T + t[:, :, None]        # (k, 3, n), batched BLAS
        resid2 = ((moved - q.T[None]) ** 2).sum(axis=1)
        inl = resid2 < thresh2
        counts = inl.sum(axis=1)
        sums = np.where(inl, np.sqrt(resid2, where=inl, out=np.zeros_like(resid2)), 0.0).sum(axis=1)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
        k = np.lexsort((np.arange(len(counts)), means, -counts))[0]
        cand = (int(counts[k]), float(means[k]), start + int(k), inl[k])
        if best is None or (cand[0], -cand[1], -cand[2]) > (best[0], -best[1], -best[2]):
            best = cand
    if best is None or best[0] < MIN_SAMPLE:
        raise DegeneracyError("no RANSAC model with at least 3 inliers")
    mask = best[3]
    inliers = np.nonzero(mask)[0]
    refined = kabsch(
        CorrespondenceSet(corr.source[inliers], corr.target[inliers]), cloud_p, cloud_q
    )
    return refined, inliers


def icp(cloud_p, cloud_q, init=None, max_iters=50, threshold=0.05):
    """Point-to-point ICP with distance gating.

    Alternates nearest-neighbor matching and kabsch until the transform
    stops changing. Returns (transform, stalled); stalled is True when an
    iteration finds no gated correspondences (last valid pose returned).
    """
    if len(cloud_p) == 0 or len(cloud_q) == 0:
        raise ValueError("cannot run ICP on empty clouds")
    current = init if init is not None else RigidTransform.identity()
    tree = cKDTree(cloud_q.points)
    for _ in range(max_iters):
        moved = current.transform_points(cloud_p.points)
        dist, nn = tree.query(moved)
        gate = dist < threshold
        if not gate.any():
            return current, True
        corr = CorrespondenceSet(np.nonzero(gate)[0], nn[gate])
        rms_before = np.sqrt(np.mean(dist[gate] ** 2))
        try:
            update = kabsch(corr, PointCloud(moved), cloud_q)
        except DegeneracyError:
            return current, True
        after = update.transform_points(moved[gate])
        rms_after = np.sqrt(np.mean(np.sum((after - cloud_q.points[corr.target]) ** 2, axis=1)))
        assert rms_after <= rms_before + 1e-12, "ICP residual increased"
        nxt = compose(update, current)
        delta = np.abs(nxt.matrix() - current.matrix()).max()
        current = nxt
        if delta < 1e-6:
            break
    return current, False


class RansacRegistration(ParamsMixin):
    """Estimator wrapper: fit(corr, P, Q) sets transform_ and inliers_."""

    def __init__(self, iters=50000, threshold=0.05, seed=0):
        self.iters = iters
        self.threshold = threshold
        self.seed = seed

    def fit(self, corr, cloud_p, cloud_q):
        self.transform_, self.inliers_ = ransac(
            corr, cloud_p, cloud_q, self.iters, self.threshold, self.seed
        )
        return self

    def predict(self, points):
        return self.transform_.transform_points(points)


class IcpRefinement(ParamsMixin):
    """Estimator wrapper: fit(P, Q, init) sets transform_ and stalled_."""

    def __init__(self, max_iters=50, threshold=0.05):
        self.max_iters = max_iters
        self.threshold = threshold

    def fit(self, cloud_p, cloud_q, init=None):
        self.transform_, self.stalled_ = icp(
            cloud_p, cloud_q, init, self.max_iters, self.threshold
        )
        return self

    def predict(self, points):
        return self.transform_.transform_points(points)
