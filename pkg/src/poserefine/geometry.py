"""Pinhole camera geometry for a planar world.

World frame: the pitch lies in the plane z=0 with the origin at the pitch
center, x along the long axis, y along the short axis and z up. Camera frame
follows the usual computer-vision convention (x right, y down, z forward).

A pose is the 6-vector ``[r0, r1, r2, t0, t1, t2]``: a Rodrigues rotation
vector followed by a translation, mapping world points into the camera frame
as ``X_cam = R(r) X_world + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

# Guard for the normalization entry of P and for homogeneous division.
EPS = 1e-12
_SMALL_ANGLE = 1e-8


class DegenerateGeometryError(ValueError):
    """A pose or homography cannot be normalized or inverted."""


@dataclass(frozen=True)
class Intrinsics:
    """Zero-skew pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def for_image(cls, width: int, height: int, fov_x_deg: float) -> Intrinsics:
        """Square pixels, principal point at the image center, given horizontal FOV."""
        fx = 0.5 * (width - 1) / np.tan(np.radians(fov_x_deg) / 2)
        return cls(fx, fx, (width - 1) / 2.0, (height - 1) / 2.0)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> Intrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


@dataclass(frozen=True)
class Pose:
    """Camera extrinsics: Rodrigues rotation ``r`` and translation ``t``."""

    r: tuple[float, float, float]
    t: tuple[float, float, float]

    def __post_init__(self):
        r = tuple(float(v) for v in self.r)
        t = tuple(float(v) for v in self.t)
        if len(r) != 3 or len(t) != 3:
            raise ValueError("rotation and translation must be 3-vectors")
        if not np.all(np.isfinite(r + t)):
            raise ValueError(f"pose components must be finite, got r={r}, t={t}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.r + self.t)

    @classmethod
    def from_vector(cls, x) -> Pose:
        x = np.asarray(x, dtype=float)
        if x.shape != (6,):
            raise ValueError(f"pose vector must have shape (6,), got {x.shape}")
        return cls(tuple(x[:3]), tuple(x[3:]))

    @classmethod
    def look_at(cls, position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> Pose:
        """Camera at world ``position`` with its optical axis through ``target``."""
        c = np.asarray(position, dtype=float)
        forward = np.asarray(target, dtype=float) - c
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise ValueError("camera position and target coincide")
        forward /= norm
        right = np.cross(forward, np.asarray(up, dtype=float))
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("viewing direction is parallel to the up vector")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.vstack([right, down, forward])
        return cls(tuple(matrix_to_rodrigues(rot)), tuple(-rot @ c))

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates, ``-R^T t``."""
        return -rodrigues_to_matrix(self.r).T @ np.asarray(self.t)

    def to_dict(self) -> dict:
        return {"r": list(self.r), "t": list(self.t)}

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        return cls(tuple(d["r"]), tuple(d["t"]))


@dataclass(frozen=True)
class NoiseModel:
    """Per-component Gaussian standard deviations for rotation (rad) and translation (m)."""

    xi_r: float
    xi_t: float

    def __post_init__(self):
        if not (self.xi_r >= 0 and self.xi_t >= 0):
            raise ValueError(f"noise std-devs must be non-negative, got {self.xi_r}, {self.xi_t}")

    @property
    def scales(self) -> np.ndarray:
        return np.array([self.xi_r] * 3 + [self.xi_t] * 3)


def _skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rodrigues_to_matrix(r) -> np.ndarray:
    """Rotation matrix for the axis-angle vector ``r`` (angle = norm, radians)."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3,) or not np.all(np.isfinite(r)):
        raise ValueError(f"rotation vector must be a finite 3-vector, got {r!r}")
    theta2 = float(r @ r)
    theta = np.sqrt(theta2)
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    k = _skew(r)
    return np.eye(3) + a * k + b * (k @ k)


def matrix_to_rodrigues(rot) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(rot, dtype=float)).as_rotvec()


def _as_pose(pose) -> Pose:
    return pose if isinstance(pose, Pose) else Pose.from_vector(pose)


def projection_from_pose(k: Intrinsics, pose) -> np.ndarray:
    """3x4 projection matrix ``K [R | t]``."""
    pose = _as_pose(pose)
    rt = np.hstack([rodrigues_to_matrix(pose.r), np.asarray(pose.t)[:, None]])
    return k.matrix @ rt


def homography_from_pose(k: Intrinsics, pose) -> np.ndarray:
    """World-plane (z=0, meters) to image-pixel homography, normalized so ``h22 == 1``.

    The homogeneous scale of a mapped world point is its camera depth divided
    by the depth of the world origin, so it is positive for points in front of
    the camera whenever the origin itself is in front.
    """
    p = projection_from_pose(k, pose)
    scale = p[2, 3]
    if abs(scale) < EPS:
        raise DegenerateGeometryError("P[2,3] vanishes: the world origin lies in the camera's principal plane")
    h = p[:, [0, 1, 3]] / scale
    h[2, 2] = 1.0
    return h


def _check_homography(h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise DegenerateGeometryError("homography has non-finite entries")
    return h


def apply_homography(h, p) -> np.ndarray:
    """Map 2D point(s) ``p`` (shape ``(2,)`` or ``(n, 2)``) through ``h``."""
    h = _check_homography(h)
    p = np.asarray(p, dtype=float)
    pts = np.atleast_2d(p)
    q = pts @ h[:, :2].T + h[:, 2]
    w = q[:, 2]
    if np.any(np.abs(w) < EPS):
        raise DegenerateGeometryError("point maps to infinity")
    out = q[:, :2] / w[:, None]
    return out[0] if p.ndim == 1 else out


def check_invertible(h) -> np.ndarray:
    """Validated homography; raises if it is singular up to scale."""
    h = _check_homography(h)
    scale = np.max(np.abs(h))
    if scale == 0 or abs(np.linalg.det(h / scale)) < EPS:
        raise DegenerateGeometryError("homography is singular")
    return h


def invert(h) -> np.ndarray:
    """Inverse homography, scaled so the bottom-right entry is 1 when possible."""
    h = check_invertible(h)
    inv = np.linalg.inv(h)
    if abs(inv[2, 2]) > EPS:
        inv = inv / inv[2, 2]
    return inv


def perturb_pose(pose, noise: NoiseModel, rng: np.random.Generator) -> Pose:
    """Add independent Gaussian noise to each pose component (exactly six draws)."""
    x = _as_pose(pose).vector
    return Pose.from_vector(x + rng.normal(0.0, noise.scales))
