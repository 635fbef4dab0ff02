"""Evaluation protocol: rotation / translation / Chamfer errors with
threshold accuracies and mean/median statistics.

Conventions (stated in every report header): geodesic rotation error,
Euclidean translation error, symmetric mean Chamfer distance; accuracy
uses strict inequality (error < threshold).
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

ROT_THRESHOLDS = (5.0, 10.0, 45.0)      # degrees
TRANS_THRESHOLDS = (5.0, 10.0, 25.0)    # cm
CHAMFER_THRESHOLDS = (1.0, 5.0, 10.0)   # mm

HEADER_NOTE = (
    "rotation: geodesic angle (deg); translation: L2 (cm); "
    "chamfer: symmetric mean NN distance (mm); accuracy@t uses error < t"
)


def rotation_error(r_est, r_gt):
    """Geodesic angle between two rotations, in degrees."""
    cos = (np.trace(r_gt.T @ r_est) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def translation_error(t_est, t_gt):
    """Euclidean distance between translations, in centimeters."""
    return 100.0 * float(np.linalg.norm(np.asarray(t_est) - np.asarray(t_gt)))


def chamfer(points_a, points_b):
    """Symmetric mean Chamfer distance in millimeters."""
    a = np.asarray(points_a, dtype=np.float64)
    b = np.asarray(points_b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer requires non-empty clouds")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 1000.0 * 0.5 * (d_ab.mean() + d_ba.mean())


def accuracy(errors, threshold):
    """Percentage of errors strictly below the threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    if len(errors) == 0:
        raise ValueError("empty error list")
    return 100.0 * float(np.mean(errors < threshold))


def _median(errors):
    errors = np.sort(np.asarray(errors, dtype=np.float64))
    n = len(errors)
    mid = n // 2
    if n % 2:
        return float(errors[mid])
    return float((errors[mid - 1] + errors[mid]) / 2.0)


@dataclass(frozen=True)
class MetricSummary:
    thresholds: tuple
    accuracies: tuple
    mean: float
    median: float


@dataclass(frozen=True)
class EvalReport:
    """Per-pair errors plus threshold accuracies and mean/median per metric."""

    pair_ids: tuple
    rotation_deg: tuple
    translation_cm: tuple
    chamfer_mm: tuple
    rotation: MetricSummary
    translation: MetricSummary
    chamfer: MetricSummary
    inlier_ratio: tuple = ()
    config_hash: str = ""
    mode: str = ""


def _summarize(errors, thresholds):
    return MetricSummary(
        thresholds=tuple(thresholds),
        accuracies=tuple(accuracy(errors, t) for t in thresholds),
        mean=float(np.mean(errors)),
        median=_median(errors),
    )


def aggregate(pair_ids, rotation_deg, translation_cm, chamfer_mm,
              inlier_ratio=(), config_hash="", mode="",
              rot_thresholds=ROT_THRESHOLDS,
              trans_thresholds=TRANS_THRESHOLDS,
              chamfer_thresholds=CHAMFER_THRESHOLDS) -> EvalReport:
    if len(pair_ids) == 0:
        raise ValueError("aggregate requires at least one pair")
    for name, seq in [("rotation", rotation_deg), ("translation", translation_cm),
                      ("chamfer", chamfer_mm)]:
        if len(seq) != len(pair_ids):
            raise ValueError(f"{name} error count does not match pair count")
    return EvalReport(
        pair_ids=tuple(pair_ids),
        rotation_deg=tuple(float(x) for x in rotation_deg),
        translation_cm=tuple(float(x) for x in translation_cm),
        chamfer_mm=tuple(float(x) for x in chamfer_mm),
        rotation=_summarize(rotation_deg, rot_thresholds),
        translation=_summarize(translation_cm, trans_thresholds),
        chamfer=_summarize(chamfer_mm, chamfer_thresholds),
        inlier_ratio=tuple(float(x) for x in inlier_ratio),
        config_hash=config_hash,
        mode=mode,
    )


def format_table(report: EvalReport) -> str:
    """Human-readable table mirroring the accuracy/error column layout."""
    out = io.StringIO()
    out.write(f"# {HEADER_NOTE}\n")
    if report.mode or report.config_hash:
        out.write(f"# mode={report.mode} config={report.config_hash}\n")
    out.write(f"# pairs={len(report.pair_ids)}\n")
    rows = [("rotation(deg)", report.rotation), ("translation(cm)", report.translation),
            ("chamfer(mm)", report.chamfer)]
    for name, s in rows:
        accs = "  ".join(f"@{t:g}:{a:6.2f}" for t, a in zip(s.thresholds, s.accuracies))
        out.write(f"{name:<16} {accs}  mean:{s.mean:10.4f}  med:{s.median:10.4f}\n")
    if report.inlier_ratio:
        out.write(f"{'inlier_ratio':<16} mean:{np.mean(report.inlier_ratio):8.4f}\n")
    return out.getvalue()


def write_csv(report: EvalReport, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["pair_id", "rot_deg", "trans_cm", "chamfer_mm"]
        has_inliers = len(report.inlier_ratio) == len(report.pair_ids)
        if has_inliers:
            header.append("inlier_ratio")
        writer.writerow(header)
        for i, pid in enumerate(report.pair_ids):
            row = [pid, f"{report.rotation_deg[i]:.9g}", f"{report.translation_cm[i]:.9g}",
                   f"{report.chamfer_mm[i]:.9g}"]
            if has_inliers:
                row.append(f"{report.inlier_ratio[i]:.9g}")
            writer.writerow(row)
