"""Geometric-color descriptor fusion: PCA compression of color features and
weighted concatenation with geometric descriptors."""

from dataclasses import dataclass

import numpy as np

from .base import ParamsMixin, check_array, check_same_length
from .descriptor import DescriptorSet


@dataclass(frozen=True)
class PcaBasis:
    """Mean vector plus an orthonormal projection, with variance ratios."""

    mean: np.ndarray
    components: np.ndarray          # (d_in, d_out), orthonormal columns
    explained_ratio: np.ndarray

    def __post_init__(self):
        mean = check_array(self.mean, "mean", shape=(None,))
        comp = check_array(self.components, "components", shape=(len(mean), None))
        gram = comp.T @ comp
        if np.abs(gram - np.eye(comp.shape[1])).max() > 1e-6:
            raise ValueError("PCA components are not orthonormal")
        ratio = check_array(self.explained_ratio, "explained_ratio", shape=(comp.shape[1],))
        if np.any(np.diff(ratio) > 1e-12):
            raise ValueError("explained variance ratios must be non-increasing")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "explained_ratio", ratio)

    @property
    def d_out(self):
        return self.components.shape[1]

    def project(self, rows):
        return (np.asarray(rows, dtype=np.float64) - self.mean) @ self.components


def fit_pca(features: DescriptorSet, d_out) -> PcaBasis:
    """Top-d_out principal directions of the visible rows.

    Component signs are fixed so each column's largest-magnitude entry is
    positive, making the basis deterministic.
    """
    rows = features.data[features.visible]
    if len(rows) < d_out:
        raise ValueError(f"need at least {d_out} valid rows for d_out={d_out}, have {len(rows)}")
    if d_out > features.dim:
        raise ValueError(f"d_out={d_out} exceeds input dimension {features.dim}")
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / len(rows)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d_out]
    comps = eigvecs[:, order]
    vals = np.maximum(eigvals[order], 0.0)
    for j in range(comps.shape[1]):
        k = np.argmax(np.abs(comps[:, j]))
        if comps[k, j] < 0:
            comps[:, j] *= -1.0
    total = max(eigvals.sum(), np.finfo(float).tiny)
    return PcaBasis(mean, comps, vals / total)


def normalize_rows(data):
    """L2-normalize each row; all-zero rows stay zero."""
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    return np.where(norms > 0, data / np.maximum(norms, np.finfo(float).tiny), data)


def fuse(f_geo: DescriptorSet, f_rgb: DescriptorSet, basis: PcaBasis, weight,
         normalize=False) -> DescriptorSet:
    """Weighted concatenation [w * f_geo ; (1-w) * PCA(f_rgb)] per row.

    Rows whose color descriptor is flagged invisible contribute a zero
    color block; output dimension is always d_geo + d_out. With normalize,
    both blocks are L2-normalized per row before weighting so neither
    block dominates the distance on magnitude alone.
    """
    if not 0.0 <= weight <= 1.0:
        raise ValueError("fusion weight must be in [0, 1]")
    check_same_length(f_geo.data, f_rgb.data, "geometric rows", "color rows")
    if f_rgb.dim != len(basis.mean):
        raise ValueError(f"color dim {f_rgb.dim} does not match basis dim {len(basis.mean)}")
    color = np.zeros((len(f_rgb), basis.d_out))
    vis = f_rgb.visible
    color[vis] = basis.project(f_rgb.data[vis])
    geo = f_geo.data
    if normalize:
        geo = normalize_rows(geo)
        color = normalize_rows(color)
    fused = np.hstack([weight * geo, (1.0 - weight) * color])
    return DescriptorSet(fused, f_geo.visible)


class PcaCompressor(ParamsMixin):
    """fit/transform wrapper over fit_pca for descriptor sets or arrays."""

    def __init__(self, n_components=64):
        self.n_components = n_components

    def fit(self, features):
        if not isinstance(features, DescriptorSet):
            features = DescriptorSet.from_array(features)
        self.basis_ = fit_pca(features, self.n_components)
        return self

    def transform(self, features):
        if isinstance(features, DescriptorSet):
            features = features.data
        return self.basis_.project(features)

    def fit_transform(self, features):
        return self.fit(features).transform(features)


class DescriptorFusion(ParamsMixin):
    """Fits PCA on pooled color descriptors, then fuses per cloud.

    fit() pools the valid color rows of all given sets (typically source
    plus target of one pair) so both sides share one basis.
    """

    def __init__(self, weight=0.5, color_dim=64, normalize=False):
        self.weight = weight
        self.color_dim = color_dim
        self.normalize = normalize

    def fit(self, *color_sets):
        rows = np.vstack([s.data[s.visible] for s in color_sets])
        pooled = DescriptorSet.from_array(rows)
        self.basis_ = fit_pca(pooled, self.color_dim)
        return self

    def transform(self, f_geo, f_rgb):
        return fuse(f_geo, f_rgb, self.basis_, self.weight,
                    normalize=self.normalize)
