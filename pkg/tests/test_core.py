import numpy as np
import pytest
from hypothesis import given, strategies as st

from genreg.core import (
    CameraIntrinsics,
    PointCloud,
    RigidTransform,
    apply,
    compose,
    invert,
    random_rotation,
    rotation_about_x,
    rotation_about_z,
)


def rz(deg, t=(0.0, 0.0, 0.0)):
    return RigidTransform(rotation_about_z(np.radians(deg)), np.asarray(t, dtype=float))


class TestRigidTransform:
    def test_identity(self):
        t = RigidTransform.identity()
        assert np.array_equal(t.rotation, np.eye(3))
        assert np.array_equal(t.translation, np.zeros(3))

    def test_rejects_reflection(self):
        refl = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            RigidTransform(refl, np.zeros(3))

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError, match="orthonormal"):
            RigidTransform(np.eye(3) + 0.1, np.zeros(3))

    def test_reorthonormalizes_small_drift(self):
        rot = rotation_about_z(0.3) + 1e-6
        t = RigidTransform(rot, np.zeros(3))
        assert np.abs(t.rotation.T @ t.rotation - np.eye(3)).max() < 1e-12

    def test_matrix_round_trip(self):
        t = rz(30, (1.0, 2.0, 3.0))
        back = RigidTransform.from_matrix(t.matrix())
        np.testing.assert_allclose(back.rotation, t.rotation)
        np.testing.assert_allclose(back.translation, t.translation)

    def test_immutable(self):
        t = RigidTransform.identity()
        with pytest.raises(ValueError):
            t.rotation[0, 0] = 2.0


class TestCompose:
    def test_rz30_rz60_is_rz90(self):
        got = compose(rz(30), rz(60))
        np.testing.assert_allclose(got.rotation, rotation_about_z(np.radians(90)),
                                   atol=1e-12)

    def test_identity_neutral(self):
        t = rz(45, (1.0, -2.0, 0.5))
        for got in (compose(t, RigidTransform.identity()),
                    compose(RigidTransform.identity(), t)):
            np.testing.assert_allclose(got.rotation, t.rotation, atol=1e-12)
            np.testing.assert_allclose(got.translation, t.translation, atol=1e-12)

    def test_application_order(self):
        # compose(a, b) applies b first
        a, b = rz(90), rz(0, (1.0, 0.0, 0.0))
        p = np.array([[1.0, 0.0, 0.0]])
        got = compose(a, b).transform_points(p)
        np.testing.assert_allclose(got, a.transform_points(b.transform_points(p)),
                                   atol=1e-12)
        np.testing.assert_allclose(got, [[0.0, 2.0, 0.0]], atol=1e-12)


class TestInvert:
    def test_identity(self):
        inv = invert(RigidTransform.identity())
        np.testing.assert_array_equal(inv.rotation, np.eye(3))
        np.testing.assert_array_equal(inv.translation, np.zeros(3))

    def test_rz90_with_translation(self):
        inv = invert(rz(90, (1.0, 0.0, 0.0)))
        np.testing.assert_allclose(inv.rotation, rotation_about_z(np.radians(-90)),
                                   atol=1e-12)
        np.testing.assert_allclose(inv.translation, [0.0, 1.0, 0.0], atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_inverse_composes_to_identity(self, seed):
        rng = np.random.default_rng(seed)
        t = RigidTransform(random_rotation(rng), rng.uniform(-5, 5, 3))
        round_trip = compose(invert(t), t)
        assert np.abs(round_trip.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(round_trip.translation).max() < 1e-12


class TestApply:
    def test_identity_preserves_cloud(self):
        rng = np.random.default_rng(0)
        cloud = PointCloud(rng.uniform(-1, 1, (10, 3)), colors=rng.random((10, 3)))
        out = apply(RigidTransform.identity(), cloud)
        np.testing.assert_array_equal(out.points, cloud.points)
        np.testing.assert_array_equal(out.colors, cloud.colors)

    def test_rotates_normals_keeps_colors(self):
        normals = np.tile([1.0, 0.0, 0.0], (4, 1))
        cloud = PointCloud(np.zeros((4, 3)), colors=np.full((4, 3), 0.5),
                           normals=normals)
        out = apply(rz(90), cloud)
        np.testing.assert_allclose(out.normals, np.tile([0.0, 1.0, 0.0], (4, 1)),
                                   atol=1e-12)
        np.testing.assert_array_equal(out.colors, cloud.colors)

    @given(st.integers(0, 2**32 - 1))
    def test_preserves_pairwise_distances(self, seed):
        rng = np.random.default_rng(seed)
        t = RigidTransform(random_rotation(rng), rng.uniform(-5, 5, 3))
        pts = rng.uniform(-2, 2, (8, 3))
        moved = t.transform_points(pts)
        before = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        after = np.linalg.norm(moved[:, None] - moved[None], axis=2)
        assert np.abs(before - after).max() < 1e-9


class TestPointCloud:
    def test_rejects_bad_colors(self):
        with pytest.raises(ValueError, match="colors"):
            PointCloud(np.zeros((2, 3)), colors=np.full((2, 3), 1.5))

    def test_rejects_non_unit_normals(self):
        with pytest.raises(ValueError, match="unit"):
            PointCloud(np.zeros((2, 3)), normals=np.full((2, 3), 1.0))

    def test_rejects_nan_points(self):
        pts = np.zeros((3, 3))
        pts[1, 1] = np.nan
        with pytest.raises(ValueError):
            PointCloud(pts)

    def test_len(self):
        assert len(PointCloud(np.zeros((7, 3)))) == 7


class TestCameraIntrinsics:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError, match="focal"):
            CameraIntrinsics(0.0, 64.0, 32.0, 32.0, 64, 64)

    def test_rejects_principal_point_outside(self):
        with pytest.raises(ValueError, match="principal"):
            CameraIntrinsics(64.0, 64.0, 100.0, 32.0, 64, 64)


class TestRotationHelpers:
    def test_rz_90_maps_x_to_y(self):
        np.testing.assert_allclose(rotation_about_z(np.pi / 2) @ [1, 0, 0],
                                   [0, 1, 0], atol=1e-12)

    def test_rx_90_maps_y_to_z(self):
        np.testing.assert_allclose(rotation_about_x(np.pi / 2) @ [0, 1, 0],
                                   [0, 0, 1], atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_random_rotation_is_rotation(self, seed):
        q = random_rotation(np.random.default_rng(seed))
        assert np.abs(q.T @ q - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(q) - 1.0) < 1e-12
