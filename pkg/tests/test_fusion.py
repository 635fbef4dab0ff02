import numpy as np
import pytest

from genreg.descriptor import DescriptorSet
from genreg.fusion import DescriptorFusion, PcaBasis, PcaCompressor, fit_pca, fuse


def make_set(rows, visible=None):
    return DescriptorSet.from_array(np.asarray(rows, dtype=float), visible)


class TestFitPca:
    def test_line_y_equals_x(self):
        t = np.linspace(-1, 1, 50)
        basis = fit_pca(make_set(np.column_stack([t, t])), 1)
        np.testing.assert_allclose(np.abs(basis.components[:, 0]),
                                   [1 / np.sqrt(2)] * 2, atol=1e-12)
        # sign fix: the largest-magnitude entry is positive
        assert basis.components[np.argmax(np.abs(basis.components[:, 0])), 0] > 0
        assert abs(basis.explained_ratio[0] - 1.0) < 1e-12

    def test_explained_ratios_non_increasing(self):
        rng = np.random.default_rng(0)
        basis = fit_pca(make_set(rng.standard_normal((100, 6))), 4)
        assert np.all(np.diff(basis.explained_ratio) <= 1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        rows = rng.standard_normal((50, 8))
        a = fit_pca(make_set(rows), 3)
        b = fit_pca(make_set(rows.copy()), 3)
        np.testing.assert_array_equal(a.components, b.components)

    def test_projection_orthonormal(self):
        rng = np.random.default_rng(2)
        basis = fit_pca(make_set(rng.standard_normal((60, 10))), 5)
        gram = basis.components.T @ basis.components
        assert np.abs(gram - np.eye(5)).max() < 1e-9

    def test_reconstruction_error_equals_discarded_variance(self):
        rng = np.random.default_rng(3)
        rows = rng.standard_normal((200, 6)) * np.array([3.0, 2.0, 1.0, 0.5, 0.2, 0.1])
        basis = fit_pca(make_set(rows), 4)
        centered = rows - rows.mean(axis=0)
        proj = centered @ basis.components
        recon = proj @ basis.components.T
        mse = np.mean(np.sum((centered - recon) ** 2, axis=1))
        cov = centered.T @ centered / len(rows)
        eigvals = np.sort(np.linalg.eigvalsh(cov))
        assert abs(mse - eigvals[:2].sum()) < 1e-9

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError, match="rows"):
            fit_pca(make_set(np.zeros((2, 5))), 3)

    def test_d_out_exceeding_dim_rejected(self):
        with pytest.raises(ValueError, match="dimension"):
            fit_pca(make_set(np.zeros((10, 3))), 4)

    def test_ignores_invisible_rows(self):
        rows = np.vstack([np.random.default_rng(4).standard_normal((20, 3)),
                          [[1e6, 1e6, 1e6]]])
        visible = np.array([True] * 20 + [False])
        basis = fit_pca(make_set(rows, visible), 2)
        assert np.abs(basis.mean).max() < 10


class TestFuse:
    def hand_basis(self):
        # 1D color feature, identity projection shifted by 0 mean
        return PcaBasis(np.zeros(1), np.eye(1), np.ones(1))

    def test_hand_example(self):
        # d_geo=2, d_rgb=1, w=0.5, f_geo=(2,0), projected color 4 -> (1, 0, 2)
        f_geo = make_set([[2.0, 0.0]])
        f_rgb = make_set([[4.0]])
        out = fuse(f_geo, f_rgb, self.hand_basis(), 0.5)
        np.testing.assert_allclose(out.data, [[1.0, 0.0, 2.0]])

    def test_weight_one_zeroes_color_block(self):
        out = fuse(make_set([[2.0, 0.0]]), make_set([[4.0]]), self.hand_basis(), 1.0)
        np.testing.assert_allclose(out.data, [[2.0, 0.0, 0.0]])

    def test_weight_zero_zeroes_geometry_block(self):
        out = fuse(make_set([[2.0, 0.0]]), make_set([[4.0]]), self.hand_basis(), 0.0)
        np.testing.assert_allclose(out.data, [[0.0, 0.0, 4.0]])

    def test_weight_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="weight"):
            fuse(make_set([[1.0]]), make_set([[1.0]]), self.hand_basis(), 1.5)

    def test_invisible_color_rows_get_zero_block(self):
        f_geo = make_set([[1.0], [1.0]])
        f_rgb = make_set([[5.0], [5.0]], visible=np.array([True, False]))
        out = fuse(f_geo, f_rgb, self.hand_basis(), 0.5)
        assert out.data[0, 1] == 2.5
        assert out.data[1, 1] == 0.0

    def test_output_dim(self):
        rng = np.random.default_rng(5)
        f_geo = make_set(rng.standard_normal((10, 33)))
        f_rgb = make_set(rng.standard_normal((10, 12)))
        basis = fit_pca(f_rgb, 4)
        out = fuse(f_geo, f_rgb, basis, 0.5)
        assert out.data.shape == (10, 37)


class TestEstimators:
    def test_pca_compressor_fit_transform(self):
        rng = np.random.default_rng(6)
        rows = rng.standard_normal((50, 8))
        comp = PcaCompressor(n_components=3)
        out = comp.fit_transform(rows)
        assert out.shape == (50, 3)
        assert comp.get_params() == {"n_components": 3}

    def test_descriptor_fusion_pools_both_sides(self):
        rng = np.random.default_rng(7)
        rgb_p = make_set(rng.standard_normal((30, 6)))
        rgb_q = make_set(rng.standard_normal((30, 6)) + 10.0)
        fuser = DescriptorFusion(weight=0.5, color_dim=2).fit(rgb_p, rgb_q)
        # pooled mean sits between the two clusters
        assert 4.0 < fuser.basis_.mean.mean() < 6.0
        geo = make_set(rng.standard_normal((30, 4)))
        out = fuser.transform(geo, rgb_p)
        assert out.data.shape == (30, 6)
