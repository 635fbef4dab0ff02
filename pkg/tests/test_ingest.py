import numpy as np
import pytest

from genreg.core import CameraIntrinsics, PointCloud, rotation_about_z
from genreg.descriptor import DescriptorSet
from genreg.ingest import (
    FeatureMapFile,
    ParseError,
    RunConfig,
    load_config,
    load_depth,
    load_external_descriptors,
    load_fmap,
    load_image,
    load_ply,
    load_pose,
    parse_config,
    save_config,
    save_depth,
    save_external_descriptors,
    save_fmap,
    save_image,
    save_ply,
    save_pose,
    serialize_config,
)
from genreg.projection import DepthMap

INTR = CameraIntrinsics(10.0, 10.0, 5.0, 5.0, 10, 8)


def sample_cloud(n=20, colors=True, normals=False, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (n, 3))
    cols = rng.integers(0, 256, (n, 3)) / 255.0 if colors else None
    nrm = None
    if normals:
        nrm = rng.standard_normal((n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, colors=cols, normals=nrm)


class TestPly:
    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip_points_and_colors(self, tmp_path, binary):
        cloud = sample_cloud()
        path = tmp_path / "c.ply"
        save_ply(cloud, path, binary=binary)
        back = load_ply(path)
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-6)
        # colors are uchar-quantized: exact after the first save/load cycle
        np.testing.assert_allclose(back.colors, cloud.colors, atol=0.5 / 255)

    def test_round_trip_normals(self, tmp_path):
        cloud = sample_cloud(normals=True)
        path = tmp_path / "c.ply"
        save_ply(cloud, path)
        back = load_ply(path)
        np.testing.assert_allclose(back.normals, cloud.normals, atol=1e-6)

    def test_missing_coordinate_property(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\n"
                         b"property float x\nproperty float y\nend_header\n0 0\n")
        with pytest.raises(ParseError, match="'z'"):
            load_ply(path)

    def test_truncated_binary_body(self, tmp_path):
        cloud = sample_cloud(n=5, colors=False)
        path = tmp_path / "c.ply"
        save_ply(cloud, path)
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(ParseError, match="bytes"):
            load_ply(path)

    def test_big_endian_rejected(self, tmp_path):
        path = tmp_path / "be.ply"
        path.write_bytes(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\n"
                         b"property float x\nproperty float y\nproperty float z\n"
                         b"end_header\n")
        with pytest.raises(ParseError, match="format"):
            load_ply(path)

    def test_nan_coordinates_rejected(self, tmp_path):
        path = tmp_path / "nan.ply"
        path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\n"
                         b"property float x\nproperty float y\nproperty float z\n"
                         b"end_header\nnan 0 0\n")
        with pytest.raises(ValueError):
            load_ply(path)


class TestDepth:
    def test_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(1)
        depths = rng.uniform(0.5, 5.0, (8, 10))
        depths[0, :3] = 0.0  # invalid pixels survive the trip
        dm = DepthMap(depths, INTR)
        path = tmp_path / "d.pgm"
        save_depth(dm, path)
        back = load_depth(path, INTR)
        assert np.abs(back.depths - dm.depths).max() <= 0.001 / 2
        assert np.array_equal(back.valid_mask, dm.valid_mask)

    def test_big_endian_maxval(self, tmp_path):
        dm = DepthMap(np.full((8, 10), 1.0), INTR)
        path = tmp_path / "d.pgm"
        save_depth(dm, path)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n10 8\n65535\n")
        # 1.0 m at 1 mm scale = 1000 = 0x03E8 big-endian
        body = raw.split(b"65535\n", 1)[1]
        assert body[:2] == b"\x03\xe8"

    def test_out_of_range_depth_rejected(self, tmp_path):
        dm = DepthMap(np.full((8, 10), 100.0), INTR)
        with pytest.raises(ValueError, match="16-bit"):
            save_depth(dm, tmp_path / "d.pgm")

    def test_wrong_maxval_rejected(self, tmp_path):
        path = tmp_path / "d.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + b"\x00" * 8)
        with pytest.raises(ParseError, match="65535"):
            load_depth(path, CameraIntrinsics(1.0, 1.0, 0.5, 0.5, 2, 2))


class TestImage:
    def test_round_trip(self, tmp_path):
        image = np.random.default_rng(2).integers(0, 256, (6, 4, 3)) / 255.0
        path = tmp_path / "i.ppm"
        save_image(image, path)
        np.testing.assert_array_equal(load_image(path), image)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "i.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(ParseError, match="P6"):
            load_image(path)


class TestFmap:
    def test_round_trip_bit_identical(self, tmp_path):
        data = np.random.default_rng(3).standard_normal((2, 2, 3)).astype(np.float32)
        path = tmp_path / "f.fmap"
        save_fmap(FeatureMapFile(data), path)
        back = load_fmap(path)
        assert np.array_equal(back.data, data)
        assert back.data.dtype == np.float32

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.fmap"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ParseError, match="magic"):
            load_fmap(path)

    def test_truncated_payload_names_counts(self, tmp_path):
        data = np.zeros((2, 2, 3), dtype=np.float32)
        path = tmp_path / "f.fmap"
        save_fmap(FeatureMapFile(data), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ParseError, match="expected 48 payload bytes, found 40"):
            load_fmap(path)

    def test_zero_dimension_rejected(self, tmp_path):
        import struct
        path = tmp_path / "f.fmap"
        path.write_bytes(b"FMAP" + struct.pack("<IIII", 1, 0, 4, 3))
        with pytest.raises(ParseError, match="zero dimension"):
            load_fmap(path)

    def test_zero_dim_construction_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            FeatureMapFile(np.zeros((0, 4, 3), dtype=np.float32))


class TestExternalDescriptors:
    def test_round_trip_against_cloud(self, tmp_path):
        cloud = sample_cloud(n=5, colors=False)
        desc = DescriptorSet.from_array(
            np.random.default_rng(4).standard_normal((5, 32)))
        path = tmp_path / "d.fmap"
        save_external_descriptors(desc, path)
        back = load_external_descriptors(path, cloud)
        assert back.data.shape == (5, 32)
        np.testing.assert_allclose(back.data, desc.data, atol=1e-6)

    def test_row_count_mismatch(self, tmp_path):
        desc = DescriptorSet.from_array(np.zeros((4, 8)))
        path = tmp_path / "d.fmap"
        save_external_descriptors(desc, path)
        with pytest.raises(ParseError, match="4 descriptor rows for a 5-point"):
            load_external_descriptors(path, sample_cloud(n=5, colors=False))

    def test_nan_payload_rejected(self, tmp_path):
        import struct
        path = tmp_path / "d.fmap"
        payload = np.array([np.nan] * 4, dtype="<f4").tobytes()
        path.write_bytes(b"FMAP" + struct.pack("<IIII", 1, 2, 1, 2) + payload)
        with pytest.raises(ValueError):
            load_external_descriptors(path, sample_cloud(n=2, colors=False))


class TestPose:
    def test_identity_file(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
        t = load_pose(path)
        assert np.array_equal(t.rotation, np.eye(3))
        assert np.array_equal(t.translation, np.zeros(3))

    def test_rz90_text(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("0 -1 0 0.5\n1 0 0 0\n0 0 1 0\n0 0 0 1\n")
        t = load_pose(path)
        np.testing.assert_allclose(t.rotation, rotation_about_z(np.pi / 2), atol=1e-9)
        np.testing.assert_allclose(t.translation, [0.5, 0, 0], atol=1e-9)

    def test_round_trip_exact(self, tmp_path):
        from genreg.core import RigidTransform, random_rotation
        rng = np.random.default_rng(5)
        t = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        path = tmp_path / "p.txt"
        save_pose(t, path)
        back = load_pose(path)
        assert np.array_equal(back.matrix(), t.matrix())

    def test_reflection_rejected(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("1 0 0 0\n0 1 0 0\n0 0 -1 0\n0 0 0 1\n")
        with pytest.raises(ParseError, match="reflection"):
            load_pose(path)

    def test_bad_last_row(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 2\n")
        with pytest.raises(ParseError, match="last row"):
            load_pose(path)

    def test_non_orthonormal_rejected(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("1 0.5 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
        with pytest.raises(ParseError, match="orthonormal"):
            load_pose(path)


class TestRunConfig:
    def test_defaults_match_reported_protocol(self):
        cfg = RunConfig()
        assert cfg.fusion_weight == 0.5
        assert cfg.color_dim == 64
        assert cfg.ransac_iters == 50000

    def test_serialize_parse_round_trip(self):
        cfg = RunConfig(fusion_weight=0.7, seed=42, overlap=0.3)
        back = parse_config(serialize_config(cfg))
        assert back == cfg

    def test_save_load_round_trip(self, tmp_path):
        cfg = RunConfig(learning_rate=0.1, n_pairs=3)
        path = tmp_path / "run.cfg"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ParseError, match="unknown config key 'nonsense'"):
            parse_config("nonsense=1\n")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# a comment\n\nseed=7  # trailing\n")
        assert cfg.seed == 7

    def test_bad_value_rejected(self):
        with pytest.raises(ParseError, match="bad value"):
            parse_config("seed=banana\n")

    def test_validation(self):
        with pytest.raises(ValueError, match="fusion_weight"):
            RunConfig(fusion_weight=1.5)

    def test_hash_stable_and_sensitive(self):
        assert RunConfig().hash() == RunConfig().hash()
        assert RunConfig().hash() != RunConfig(seed=1).hash()
