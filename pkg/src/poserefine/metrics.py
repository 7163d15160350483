"""Calibration quality metrics: camera-view field IoU and real-world keypoint error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import FieldModel
from .geometry import EPS, apply_homography, invert


def field_polygon_mask(h, model: FieldModel, img_w: int, img_h: int) -> np.ndarray:
    """Boolean camera-view raster of the pitch rectangle under homography ``h``.

    A pixel belongs to the field when its center back-projects (through
    ``h^-1``) onto the pitch rectangle in front of the camera. ``h`` must
    give positive homogeneous scale to world points in front of the camera,
    as `homography_from_pose` does when the pitch center is in view.
    """
    invert(h)  # raises on singular input
    # unnormalized inverse keeps the sign of the homogeneous scale meaningful
    h_inv = np.linalg.inv(np.asarray(h, dtype=float))
    u, v = np.meshgrid(np.arange(img_w, dtype=float), np.arange(img_h, dtype=float))
    qx = h_inv[0, 0] * u + h_inv[0, 1] * v + h_inv[0, 2]
    qy = h_inv[1, 0] * u + h_inv[1, 1] * v + h_inv[1, 2]
    qw = h_inv[2, 0] * u + h_inv[2, 1] * v + h_inv[2, 2]
    front = qw > EPS
    w = np.where(front, qw, 1.0)
    x, y = qx / w, qy / w
    inside = (np.abs(x) <= model.length / 2) & (np.abs(y) <= model.width / 2)
    return front & inside


def iou_part(h_gt, h_est, model: FieldModel, img_w: int, img_h: int) -> float:
    """Intersection over union of the field polygon seen under both homographies."""
    a = field_polygon_mask(h_gt, model, img_w, img_h)
    b = field_polygon_mask(h_est, model, img_w, img_h)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def rwe(h_gt, h_est, model: FieldModel, img_w: int, img_h: int) -> np.ndarray:
    """Real-world errors (meters) of the keypoints visible under ``h_gt``.

    Each visible keypoint is mapped into the image with ``h_gt`` and back to
    the world with ``h_est^-1``; the result is its distance to the original.
    May be empty.
    """
    kp = np.asarray(model.keypoints, dtype=float).reshape(-1, 2)
    q = kp @ np.asarray(h_gt)[:, :2].T + np.asarray(h_gt)[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = q[:, :2] / q[:, 2:3]
    # a keypoint behind the camera (non-positive scale) is never visible
    visible = (q[:, 2] > EPS) & (px[:, 0] >= 0) & (px[:, 0] < img_w) & (px[:, 1] >= 0) & (px[:, 1] < img_h)
    if not visible.any():
        return np.zeros(0)
    if np.array_equal(h_gt, h_est):
        # the round trip is the identity; skip the inverse's rounding error
        return np.zeros(int(visible.sum()))
    back = apply_homography(invert(h_est), px[visible])
    return np.linalg.norm(back - kp[visible], axis=1)


@dataclass(frozen=True)
class MetricSummary:
    iou_part: float
    rwe_mean: float
    rwe_std: float
    rwe_median: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "iou_part": self.iou_part,
            "rwe_mean": self.rwe_mean,
            "rwe_std": self.rwe_std,
            "rwe_median": self.rwe_median,
            "n_points": self.n_points,
        }


def summarize(distances, iou: float) -> MetricSummary:
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("cannot summarize an empty RWE set (no keypoint visible)")
    return MetricSummary(float(iou), float(d.mean()), float(d.std()), float(np.median(d)), int(d.size))
