"""Synthetic camera-view segmentation masks and perturbed calibration scenarios.

The renderer stands in for a trained segmentation network: it draws the field
markings (or area classes) as seen by a camera with known pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .field import AREA_CLASSES, FieldModel, _class_lookup
from .geometry import (
    Intrinsics,
    NoiseModel,
    Pose,
    apply_homography,
    homography_from_pose,
    invert,
    perturb_pose,
    rodrigues_to_matrix,
)
from .imaging import draw_segments, gaussian_blur

# world-space subdivision of markings; per-piece projected widths
_PIECE_LENGTH = 1.0
_DEPTH_EPS = 1e-3


@dataclass(frozen=True)
class MaskDegradation:
    """Imperfect-segmentation simulation applied after rendering."""

    dropout_fraction: float = 0.0
    speckle_rate: float = 0.0
    blur_size: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_fraction <= 1.0:
            raise ValueError(f"dropout_fraction must lie in [0, 1], got {self.dropout_fraction}")
        if not 0.0 <= self.speckle_rate <= 1.0:
            raise ValueError(f"speckle_rate must lie in [0, 1], got {self.speckle_rate}")
        if self.blur_size < 0 or (self.blur_size >= 2 and self.blur_size % 2 == 0):
            raise ValueError(f"blur_size must be 0 or odd, got {self.blur_size}")


def _clip_front(pts: np.ndarray, depth: np.ndarray):
    """Split a world polyline into runs in front of the camera (depth > eps)."""
    runs, current = [], []
    for i in range(len(pts)):
        inside = depth[i] > _DEPTH_EPS
        if i > 0 and (depth[i - 1] > _DEPTH_EPS) != inside:
            s = (_DEPTH_EPS - depth[i - 1]) / (depth[i] - depth[i - 1])
            crossing = pts[i - 1] + s * (pts[i] - pts[i - 1])
            current.append(crossing)
            if not inside:
                runs.append(np.array(current))
                current = []
        if inside:
            current.append(pts[i])
    if len(current) >= 2:
        runs.append(np.array(current))
    return [r for r in runs if len(r) >= 2]


def _render_lines(model: FieldModel, k: Intrinsics, pose: Pose, img_w: int, img_h: int, keep) -> np.ndarray:
    canvas = np.zeros((img_h, img_w))
    h = homography_from_pose(k, pose)
    rot_row = np.asarray(_depth_row(k, pose))
    polylines = model.polylines(max_step=_PIECE_LENGTH, max_sagitta=0.01)
    for pts, kept in zip(polylines, keep):
        if not kept:
            continue
        depth = pts @ rot_row[:2] + rot_row[2]
        for run in _clip_front(pts, depth):
            px = apply_homography(h, run)
            a, b = px[:-1], px[1:]
            mid = 0.5 * (run[:-1] + run[1:])
            direction = run[1:] - run[:-1]
            normal = np.column_stack([-direction[:, 1], direction[:, 0]])
            normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-12)
            off = apply_homography(h, mid + normal * model.line_width / 2)
            half = np.linalg.norm(off - apply_homography(h, mid), axis=1)
            draw_segments(canvas, a, b, np.maximum(half, 0.5))
    return canvas


def _depth_row(k: Intrinsics, pose: Pose):
    # camera depth of world point (x, y, 0) is r20 x + r21 y + t2
    rot = rodrigues_to_matrix(pose.r)
    return rot[2, 0], rot[2, 1], pose.t[2]


def _render_areas(model: FieldModel, k: Intrinsics, pose: Pose, img_w: int, img_h: int, keep, class_values) -> np.ndarray:
    lut = _class_lookup(class_values)
    h_inv = invert(homography_from_pose(k, pose))
    u, v = np.meshgrid(np.arange(img_w, dtype=float), np.arange(img_h, dtype=float))
    q = np.stack([u, v, np.ones_like(u)], axis=-1) @ h_inv.T
    # homogeneous scale of the world point; positive when the ray hits the plane in front
    sign = 1.0 if pose.t[2] > 0 else -1.0
    front = q[..., 2] * sign > 1e-12
    w = np.where(front, q[..., 2], 1.0)
    labels = model.area_labels(q[..., 0] / w, q[..., 1] / w)
    labels = np.where(front, labels, 0)
    # a dropped region falls back to its enclosing class
    parent = np.array([0, 0, 1, 2])
    for cls in (3, 2, 1):
        if not keep[cls - 1]:
            labels = np.where(labels == cls, parent[cls], labels)
    return lut[labels]


def render_camera_mask(
    model: FieldModel,
    k: Intrinsics,
    pose: Pose,
    img_w: int,
    img_h: int,
    mode: str = "lines",
    degrade: MaskDegradation | None = None,
    rng: np.random.Generator | None = None,
    class_values: dict | None = None,
) -> np.ndarray:
    """Render the field as a camera with pose ``pose`` would segment it.

    Lines mode draws every marking with its projected width (at least one
    pixel); areas mode labels every pixel with its area class value. The
    degradation is applied in order: primitive dropout, pixel speckle, blur.
    Dropout draws one uniform per primitive (per area class in areas mode)
    so a larger ``dropout_fraction`` removes a superset of primitives.
    """
    degrade = degrade or MaskDegradation()
    if rng is None:
        rng = np.random.default_rng(0)
    if mode == "lines":
        keep = rng.random(len(model.primitives)) >= degrade.dropout_fraction
        mask = _render_lines(model, k, pose, img_w, img_h, keep)
    elif mode == "areas":
        keep = rng.random(len(AREA_CLASSES) - 1) >= degrade.dropout_fraction
        mask = _render_areas(model, k, pose, img_w, img_h, keep, class_values)
    else:
        raise ValueError(f"mode must be 'lines' or 'areas', got {mode!r}")
    if degrade.speckle_rate > 0:
        flip = rng.random(mask.shape) < degrade.speckle_rate
        if mode == "lines":
            mask = np.where(flip, 1.0 - mask, mask)
        else:
            mask = np.where(flip, rng.choice(_class_lookup(class_values), size=mask.shape), mask)
    if degrade.blur_size > 1:
        mask = gaussian_blur(mask, degrade.blur_size)
    return np.clip(mask, 0.0, 1.0)


@dataclass(frozen=True)
class CameraSite:
    """Camera mounting position ``(x, y)`` at ``height`` meters, aimed at ``target``."""

    x: float
    y: float
    height: float
    target: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.height > 0:
            raise ValueError(f"camera height must be positive, got {self.height}")

    def pose(self) -> Pose:
        return Pose.look_at((self.x, self.y, self.height), (*self.target, 0.0))

    def to_dict(self) -> dict:
        return {"position": [self.x, self.y], "height": self.height, "target": list(self.target)}

    @classmethod
    def from_dict(cls, d: dict) -> CameraSite:
        x, y = d["position"]
        return cls(float(x), float(y), float(d["height"]), tuple(d.get("target", (0.0, 0.0))))


def halfway_sites(model: FieldModel, height: float = 6.0, setback: float = 8.0, spread: float = 4.0) -> list[CameraSite]:
    """Four sites behind the halfway-line / sideline intersections, two per side,
    ``spread`` meters either side of the halfway line, all aimed at the center."""
    y = model.width / 2 + setback
    return [CameraSite(sx, sy, height) for sy in (-y, y) for sx in (-spread, spread)]


@dataclass(frozen=True)
class Scenario:
    scenario_id: int
    camera: int
    intrinsics: Intrinsics
    gt_pose: Pose
    start_pose: Pose
    noise: NoiseModel
    seed: int

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "camera": self.camera,
            "intrinsics": self.intrinsics.to_dict(),
            "gt_pose": self.gt_pose.to_dict(),
            "start_pose": self.start_pose.to_dict(),
            "noise": [self.noise.xi_r, self.noise.xi_t],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        return cls(
            int(d["scenario_id"]),
            int(d["camera"]),
            Intrinsics.from_dict(d["intrinsics"]),
            Pose.from_dict(d["gt_pose"]),
            Pose.from_dict(d["start_pose"]),
            NoiseModel(*d["noise"]),
            int(d["seed"]),
        )


def visible_keypoints(model: FieldModel, k: Intrinsics, pose: Pose, img_w: int, img_h: int) -> np.ndarray:
    """Boolean per keypoint: in front of the camera and inside the image."""
    kp = np.asarray(model.keypoints)
    r20, r21, t2 = _depth_row(k, pose)
    in_front = kp @ np.array([r20, r21]) + t2 > 0
    px = apply_homography(homography_from_pose(k, pose), kp)
    inside = (px[:, 0] >= 0) & (px[:, 0] < img_w) & (px[:, 1] >= 0) & (px[:, 1] < img_h)
    return in_front & inside


def generate_scenarios(
    model: FieldModel,
    k: Intrinsics,
    camera_sites: list[CameraSite],
    noise: NoiseModel,
    count: int,
    seed: int,
    img_w: int,
    img_h: int,
    first_id: int = 0,
) -> list[Scenario]:
    """``count`` perturbed starts for every camera site; reproducible from ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=len(camera_sites) * count)
    scenarios = []
    for ci, site in enumerate(camera_sites):
        gt = site.pose()
        n_visible = int(visible_keypoints(model, k, gt, img_w, img_h).sum())
        if n_visible < 4:
            raise ValueError(f"camera site {ci} sees only {n_visible} keypoints; at least 4 are required")
        for j in range(count):
            s = int(seeds[ci * count + j])
            start = perturb_pose(gt, noise, np.random.default_rng(s))
            scenarios.append(Scenario(first_id + len(scenarios), ci, k, gt, start, noise, s))
    return scenarios


def dump_scenarios(scenarios, path) -> None:
    with open(path, "w") as fh:
        json.dump([s.to_dict() for s in scenarios], fh, indent=2)


def load_scenarios(path) -> list[Scenario]:
    with open(path) as fh:
        return [Scenario.from_dict(d) for d in json.load(fh)]
