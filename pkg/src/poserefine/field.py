"""Planar sports field model, template raster frame and rasterization."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import schemas
from .imaging import draw_segments

AREA_CLASSES = ("outside", "field", "penalty", "goal")
DEFAULT_CLASS_VALUES = {"outside": 0.0, "field": 0.4, "penalty": 0.7, "goal": 1.0}


@dataclass(frozen=True)
class Segment:
    name: str
    a: tuple[float, float]
    b: tuple[float, float]

    def polyline(self, max_step: float | None = None) -> np.ndarray:
        a, b = np.asarray(self.a, float), np.asarray(self.b, float)
        n = 1 if not max_step else max(1, int(math.ceil(np.linalg.norm(b - a) / max_step)))
        s = np.linspace(0.0, 1.0, n + 1)[:, None]
        return a + s * (b - a)

    def to_dict(self) -> dict:
        return {"type": "segment", "name": self.name, "a": list(self.a), "b": list(self.b)}


@dataclass(frozen=True)
class Arc:
    """Counter-clockwise circular arc from ``start`` to ``end`` (radians)."""

    name: str
    center: tuple[float, float]
    radius: float
    start: float
    end: float

    def polyline(self, max_step: float | None = None, max_sagitta: float = 0.025) -> np.ndarray:
        sweep = self.end - self.start
        # chord angle whose sagitta is max_sagitta
        dphi = 2.0 * math.acos(max(-1.0, 1.0 - max_sagitta / self.radius))
        if max_step:
            dphi = min(dphi, max_step / self.radius)
        n = max(2, int(math.ceil(abs(sweep) / dphi)))
        n += n % 2
        phi = self.start + sweep * np.arange(n + 1) / n
        c = np.asarray(self.center, float)
        return c + self.radius * np.column_stack([np.cos(phi), np.sin(phi)])

    def to_dict(self) -> dict:
        return {
            "type": "arc",
            "name": self.name,
            "center": list(self.center),
            "radius": self.radius,
            "start": self.start,
            "end": self.end,
        }


@dataclass(frozen=True)
class Area:
    """Axis-aligned marked region (penalty or goal area)."""

    kind: str
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x, y):
        return (x >= self.xmin) & (x <= self.xmax) & (y >= self.ymin) & (y <= self.ymax)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rect": [self.xmin, self.ymin, self.xmax, self.ymax]}


@dataclass(frozen=True)
class FieldModel:
    length: float
    width: float
    line_width: float = 0.12
    primitives: tuple = ()
    keypoints: tuple = ()
    areas: tuple = ()

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.line_width > 0):
            raise ValueError("field dimensions and line width must be positive")
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "keypoints", tuple(tuple(map(float, p)) for p in self.keypoints))
        object.__setattr__(self, "areas", tuple(self.areas))

    @property
    def boundary(self) -> np.ndarray:
        """Outer pitch rectangle corners, counter-clockwise."""
        hl, hw = self.length / 2, self.width / 2
        return np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])

    def polylines(self, max_step: float | None = None, max_sagitta: float = 0.025) -> list[np.ndarray]:
        out = []
        for prim in self.primitives:
            if isinstance(prim, Arc):
                out.append(prim.polyline(max_step, max_sagitta))
            else:
                out.append(prim.polyline(max_step))
        return out

    def area_labels(self, x, y) -> np.ndarray:
        """Class index per world point: 0 outside, 1 field, 2 penalty, 3 goal."""
        x, y = np.asarray(x, float), np.asarray(y, float)
        hl, hw = self.length / 2, self.width / 2
        labels = np.where((np.abs(x) <= hl) & (np.abs(y) <= hw), 1, 0)
        for kind, idx in (("penalty", 2), ("goal", 3)):
            for area in self.areas:
                if area.kind == kind:
                    labels = np.where(area.contains(x, y), idx, labels)
        return labels

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "width": self.width,
            "line_width": self.line_width,
            "primitives": [p.to_dict() for p in self.primitives],
            "keypoints": [list(p) for p in self.keypoints],
            "areas": [a.to_dict() for a in self.areas],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FieldModel:
        try:
            jsonschema.validate(d, schemas.load("field"))
        except jsonschema.ValidationError as exc:
            raise ValueError(f"invalid field model: {exc.message}") from exc
        prims = []
        for p in d.get("primitives", []):
            if p["type"] == "segment":
                prims.append(Segment(p.get("name", ""), tuple(p["a"]), tuple(p["b"])))
            elif p["type"] == "arc":
                prims.append(Arc(p.get("name", ""), tuple(p["center"]), float(p["radius"]), float(p["start"]), float(p["end"])))
            else:
                raise ValueError(f"unknown primitive type {p['type']!r}")
        areas = [Area(a["kind"], *map(float, a["rect"])) for a in d.get("areas", [])]
        return cls(float(d["length"]), float(d["width"]), float(d.get("line_width", 0.12)), prims, d.get("keypoints", []), areas)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> FieldModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def standard_pitch(length: float = 105.0, width: float = 68.0, line_width: float = 0.12) -> FieldModel:
    """Soccer pitch with the standard marking layout, centered at the origin."""
    if length <= 0 or width <= 0:
        raise ValueError(f"pitch dimensions must be positive, got {length} x {width}")
    if not (90 <= length <= 120 and 45 <= width <= 90):
        warnings.warn(f"{length} x {width} m is outside the regulation pitch range", stacklevel=2)
    hl, hw = length / 2, width / 2
    pen_depth, pen_half = 16.5, 40.32 / 2
    goal_depth, goal_half = 5.5, 18.32 / 2
    radius, spot = 9.15, 11.0

    prims = [
        Segment("side line top", (-hl, hw), (hl, hw)),
        Segment("side line bottom", (-hl, -hw), (hl, -hw)),
        Segment("goal line left", (-hl, -hw), (-hl, hw)),
        Segment("goal line right", (hl, -hw), (hl, hw)),
        Segment("halfway line", (0.0, -hw), (0.0, hw)),
        Arc("center circle", (0.0, 0.0), radius, 0.0, 2 * math.pi),
    ]
    for side, sign in (("left", -1.0), ("right", 1.0)):
        for label, depth, half in (("penalty", pen_depth, pen_half), ("goal", goal_depth, goal_half)):
            inner = sign * (hl - depth)
            prims += [
                Segment(f"{label} area {side} top", (sign * hl, half), (inner, half)),
                Segment(f"{label} area {side} bottom", (sign * hl, -half), (inner, -half)),
                Segment(f"{label} area {side} main", (inner, -half), (inner, half)),
            ]
    phi = math.acos((pen_depth - spot) / radius)
    prims += [
        Arc("penalty arc left", (-hl + spot, 0.0), radius, -phi, phi),
        Arc("penalty arc right", (hl - spot, 0.0), radius, math.pi - phi, math.pi + phi),
    ]
    quarter = math.pi / 2
    for name, corner, start in (
        ("corner arc bottom left", (-hl, -hw), 0.0),
        ("corner arc bottom right", (hl, -hw), quarter),
        ("corner arc top right", (hl, hw), 2 * quarter),
        ("corner arc top left", (-hl, hw), 3 * quarter),
    ):
        prims.append(Arc(name, corner, 1.0, start, start + quarter))

    areas = []
    for sign in (-1.0, 1.0):
        for kind, depth, half in (("penalty", pen_depth, pen_half), ("goal", goal_depth, goal_half)):
            xs = sorted((sign * hl, sign * (hl - depth)))
            areas.append(Area(kind, xs[0], -half, xs[1], half))

    keypoints = [(0.0, 0.0), (-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw), (0.0, -hw), (0.0, hw)]
    return FieldModel(length, width, line_width, prims, keypoints, areas)


@dataclass(frozen=True)
class TemplateFrame:
    """Affine map between top-view raster pixels and world meters."""

    pixels_per_meter: float
    origin_px: tuple[float, float]
    width_px: int
    height_px: int

    def world_to_pixel(self, x, y):
        s = self.pixels_per_meter
        return self.origin_px[0] + s * np.asarray(x, float), self.origin_px[1] + s * np.asarray(y, float)

    def pixel_to_world(self, u, v):
        s = self.pixels_per_meter
        return (np.asarray(u, float) - self.origin_px[0]) / s, (np.asarray(v, float) - self.origin_px[1]) / s

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    @classmethod
    def for_field(cls, model: FieldModel, pixels_per_meter: float = 10.0, margin: float = 5.0) -> TemplateFrame:
        """Frame covering the pitch plus ``margin`` meters, centered so the field's
        180 degree symmetry maps onto the pixel grid."""
        w = int(round((model.length + 2 * margin) * pixels_per_meter))
        h = int(round((model.width + 2 * margin) * pixels_per_meter))
        return cls(float(pixels_per_meter), ((w - 1) / 2.0, (h - 1) / 2.0), w, h)

    def to_dict(self) -> dict:
        return {
            "pixels_per_meter": self.pixels_per_meter,
            "origin_px": list(self.origin_px),
            "width_px": self.width_px,
            "height_px": self.height_px,
        }


def rasterize_lines(model: FieldModel, frame: TemplateFrame) -> np.ndarray:
    """Binary line raster: pixel centers within half a line width of a marking.

    The half width is floored at half a pixel, so every line is at least one
    pixel thick.
    """
    canvas = np.zeros(frame.shape)
    half_width = max(model.line_width * frame.pixels_per_meter / 2.0, 0.5)
    sagitta = 0.25 / frame.pixels_per_meter
    for pts in model.polylines(max_sagitta=sagitta):
        u, v = frame.world_to_pixel(pts[:, 0], pts[:, 1])
        px = np.column_stack([u, v])
        draw_segments(canvas, px[:-1], px[1:], half_width)
    return canvas


def _class_lookup(class_values: dict | None) -> np.ndarray:
    values = dict(DEFAULT_CLASS_VALUES)
    if class_values:
        unknown = set(class_values) - set(AREA_CLASSES)
        if unknown:
            raise ValueError(f"unknown area classes: {sorted(unknown)}")
        values.update(class_values)
    lut = np.array([float(values[c]) for c in AREA_CLASSES])
    if len(set(lut.tolist())) != len(lut):
        raise ValueError(f"area class values must be distinct, got {values}")
    if np.any((lut < 0) | (lut > 1)):
        raise ValueError("area class values must lie in [0, 1]")
    return lut


def rasterize_areas(model: FieldModel, frame: TemplateFrame, class_values: dict | None = None) -> np.ndarray:
    """Area raster: each pixel takes the value of its innermost enclosing region."""
    lut = _class_lookup(class_values)
    u, v = np.meshgrid(np.arange(frame.width_px, dtype=float), np.arange(frame.height_px, dtype=float))
    x, y = frame.pixel_to_world(u, v)
    return lut[model.area_labels(x, y)]
