import csv

import numpy as np
import pytest

from genreg.core import rotation_about_x, rotation_about_z
from genreg.metrics import (
    accuracy,
    aggregate,
    chamfer,
    format_table,
    rotation_error,
    translation_error,
    write_csv,
)


class TestRotationError:
    def test_identical_rotations(self):
        r = rotation_about_z(0.4)
        assert rotation_error(r, r) == 0.0

    def test_rz30_vs_identity(self):
        r = rotation_about_z(np.radians(30)) @ rotation_about_x(0.0)
        assert abs(rotation_error(r, np.eye(3)) - 30.0) < 1e-9

    def test_symmetric(self):
        a, b = rotation_about_z(0.3), rotation_about_x(0.7)
        assert abs(rotation_error(a, b) - rotation_error(b, a)) < 1e-9

    def test_clamps_numerical_overflow(self):
        r = rotation_about_z(np.pi)  # cos at the -1 boundary
        assert abs(rotation_error(r, np.eye(3)) - 180.0) < 1e-6


class TestTranslationError:
    def test_equal_vectors(self):
        assert translation_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_5cm_offset(self):
        assert abs(translation_error([0, 0, 0], [0, 0, 0.05]) - 5.0) < 1e-9

    def test_3_4_5_triangle(self):
        assert abs(translation_error([0.03, 0.04, 0.0], [0, 0, 0]) - 5.0) < 1e-9


class TestChamfer:
    def test_identical_clouds(self):
        pts = np.random.default_rng(0).uniform(-1, 1, (50, 3))
        assert chamfer(pts, pts) == 0.0

    def test_single_point_1mm(self):
        assert abs(chamfer([[0, 0, 0]], [[0, 0, 0.001]]) - 1.0) < 1e-9

    def test_matches_brute_force(self):
        a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        b = np.array([[0.1, 0, 0], [0.8, 0, 0], [2.0, 0, 0]])
        d_ab = np.min(np.linalg.norm(a[:, None] - b[None], axis=2), axis=1)
        d_ba = np.min(np.linalg.norm(b[:, None] - a[None], axis=2), axis=1)
        expected = 1000.0 * 0.5 * (d_ab.mean() + d_ba.mean())
        assert abs(chamfer(a, b) - expected) < 1e-9

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


class TestAccuracy:
    def test_counts_strictly_below(self):
        assert abs(accuracy([1.0, 2.0, 3.0], 2.5) - 100.0 * 2 / 3) < 1e-9

    def test_boundary_is_excluded(self):
        assert accuracy([2.5], 2.5) == 0.0

    def test_all_below(self):
        assert accuracy([0.1, 0.2], 1.0) == 100.0


class TestAggregate:
    def test_perfect_poses(self):
        rep = aggregate(["a", "b"], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0])
        assert rep.rotation.accuracies == (100.0, 100.0, 100.0)
        assert rep.translation.accuracies == (100.0, 100.0, 100.0)
        assert rep.chamfer.accuracies == (100.0, 100.0, 100.0)
        assert rep.rotation.mean == 0.0 and rep.rotation.median == 0.0

    def test_hand_aggregation(self):
        # rotation errors {3, 7, 12, 50} vs thresholds (5, 10, 45):
        # <5: 1/4, <10: 2/4, <45: 3/4
        rep = aggregate(["a", "b", "c", "d"], [3.0, 7.0, 12.0, 50.0],
                        [1.0] * 4, [0.5] * 4)
        assert rep.rotation.accuracies == (25.0, 50.0, 75.0)
        assert rep.rotation.mean == 18.0
        # even count: median is the mean of the two middle values
        assert rep.rotation.median == (7.0 + 12.0) / 2.0

    def test_median_even_count(self):
        rep = aggregate(["a", "b"], [4.0, 6.0], [0.0, 0.0], [0.0, 0.0])
        assert rep.rotation.median == 5.0

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            aggregate(["a", "b"], [1.0], [1.0, 2.0], [1.0, 2.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([], [], [], [])


class TestReportOutput:
    def test_table_states_conventions(self):
        rep = aggregate(["a"], [1.0], [1.0], [1.0])
        table = format_table(rep)
        assert "geodesic" in table
        assert "error < t" in table

    def test_csv_round_trip(self, tmp_path):
        rep = aggregate(["p0", "p1"], [1.5, 2.5], [3.0, 4.0], [0.1, 0.2],
                        inlier_ratio=[0.9, 0.8])
        path = tmp_path / "report.csv"
        write_csv(rep, path)
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert rows[0]["pair_id"] == "p0"
        assert float(rows[1]["rot_deg"]) == 2.5
        assert float(rows[0]["inlier_ratio"]) == 0.9
