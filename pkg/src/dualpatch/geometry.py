"""Star-shaped polygon patches: validation, area control, rasterization.

Shapes are ordered polar vertices (radius, angle) about their center.
Strictly increasing angles with every successive gap (including the wrap
from last back to first) below pi keep the polygon simple and star-shaped
about the origin, which makes rasterization unambiguous.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

K_MAX_DEFAULT = 16

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in pixel coordinates, origin top-left."""

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def intersect(self, other: "Rect") -> "Rect":
        x0 = max(self.x, other.x)
        y0 = max(self.y, other.y)
        x1 = min(self.x + self.w, other.x + other.w)
        y1 = min(self.y + self.h, other.y + other.h)
        return Rect(x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))


@dataclass(frozen=True)
class PolygonShape:
    """Ordered polar vertices (radius, angle in [0, 2pi)) about the center."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "vertices", tuple((float(r), float(a)) for r, a in self.vertices)
        )

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def radii(self) -> np.ndarray:
        return np.array([r for r, _ in self.vertices], dtype=np.float64)

    @property
    def angles(self) -> np.ndarray:
        return np.array([a for _, a in self.vertices], dtype=np.float64)


@dataclass
class BitMask:
    """Binary pixel grid; 1 = inside patch."""

    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask dimensions must be positive")
        if self.bits.shape != (self.height, self.width):
            raise ValueError("bits shape does not match declared dimensions")
        if self.bits.dtype != np.bool_:
            self.bits = self.bits.astype(bool)

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())


def validate(shape: PolygonShape, k_max: int = K_MAX_DEFAULT) -> list[str]:
    """Return every violated invariant; an empty list means the shape is valid."""
    violations = []
    k = shape.vertex_count
    if k < 3:
        violations.append("K >= 3")
    if k > k_max:
        violations.append(f"K <= K_max ({k_max})")
    radii = shape.radii
    angles = shape.angles
    if not np.all(np.isfinite(radii)) or not np.all(np.isfinite(angles)):
        violations.append("vertices finite")
        return violations
    if np.any(radii <= 0.0):
        violations.append("radii > 0")
    if np.any(angles < 0.0) or np.any(angles >= TWO_PI):
        violations.append("angles within [0, 2pi)")
    if k >= 2:
        if np.any(np.diff(angles) <= 0.0):
            violations.append("angles strictly increasing")
        else:
            gaps = np.diff(angles)
            wrap = angles[0] + TWO_PI - angles[-1]
            if np.any(gaps >= math.pi) or wrap >= math.pi:
                violations.append("angle gaps < pi")
    if not violations and k >= 3:
        if polygon_area(shape, _checked=True) <= 0.0:
            violations.append("area > 0")
    return violations


def require_valid(shape: PolygonShape, k_max: int = K_MAX_DEFAULT) -> None:
    violations = validate(shape, k_max)
    if violations:
        raise ValueError(f"invalid shape: {'; '.join(violations)}")


def to_cartesian(shape: PolygonShape, center=(0.0, 0.0), scale: float = 1.0) -> np.ndarray:
    """Vertices as (K, 2) x/y array: center + scale * r * (cos a, sin a)."""
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    r = shape.radii
    a = shape.angles
    xy = np.empty((shape.vertex_count, 2), dtype=np.float64)
    xy[:, 0] = center[0] + scale * r * np.cos(a)
    xy[:, 1] = center[1] + scale * r * np.sin(a)
    return xy


def polygon_area(shape: PolygonShape, _checked: bool = False) -> float:
    """Continuous polygon area via the shoelace formula at scale 1."""
    if not _checked:
        require_valid(shape)
    xy = to_cartesian(shape)
    x = xy[:, 0]
    y = xy[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def normalize_area(shape: PolygonShape, target_area: float) -> PolygonShape:
    """Scale all radii so the continuous area equals target_area."""
    if target_area <= 0.0:
        raise ValueError("target area must be positive")
    current = polygon_area(shape)
    factor = math.sqrt(target_area / current)
    return PolygonShape(tuple((r * factor, a) for r, a in shape.vertices))


def regular_polygon(k: int, radius: float = 1.0, angle_offset: float | None = None) -> PolygonShape:
    """Regular K-gon; the default offset of pi/K puts K=4 at 45/135/225/315 deg."""
    if k < 3:
        raise ValueError("regular polygon needs K >= 3")
    if angle_offset is None:
        angle_offset = math.pi / k
    angles = (angle_offset + np.arange(k) * (TWO_PI / k)) % TWO_PI
    order = np.argsort(angles)
    return PolygonShape(tuple((radius, float(angles[i])) for i in order))


def rasterize(shape: PolygonShape, placement: Rect, raster_size: tuple[int, int]) -> BitMask:
    """Rasterize the shape into a raster-sized mask, area-matched to `placement`.

    The polygon is translated so its polar center sits at the placement
    center and scaled so its continuous pixel area equals the placement
    area (popcount then approximates placement.area). A pixel is set iff
    its center lies inside the polygon (even-odd rule); pixels outside the
    raster are clipped away. Deterministic across backends.
    """
    if placement.w <= 0.0 or placement.h <= 0.0:
        raise ValueError("empty placement rect")
    width, height = raster_size
    if width <= 0 or height <= 0:
        raise ValueError("raster dimensions must be positive")
    require_valid(shape, k_max=np.inf)
    scale = math.sqrt(placement.area / polygon_area(shape, _checked=True))
    xy = to_cartesian(shape, center=placement.center, scale=scale)
    bits = np.zeros((height, width), dtype=bool)
    xs = np.ascontiguousarray(xy[:, 0])
    ys = np.ascontiguousarray(xy[:, 1])
    # Pixel center (col + 0.5, row + 0.5) can only fall inside within the
    # polygon bounding box; clip the fill window to it.
    col0 = max(0, math.ceil(float(xs.min()) - 0.5))
    col1 = min(width, math.floor(float(xs.max()) - 0.5) + 1)
    row0 = max(0, math.ceil(float(ys.min()) - 0.5))
    row1 = min(height, math.floor(float(ys.max()) - 0.5) + 1)
    _kernels.fill_window(xs, ys, bits, row0, row1, col0, col1)
    return BitMask(width=width, height=height, bits=bits)


def mask_iou(a: BitMask, b: BitMask) -> float:
    """Intersection over union of two masks; 1.0 when both are empty."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("mask dimension mismatch")
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a.bits, b.bits).sum())
    return inter / union


def shape_to_dict(shape: PolygonShape) -> dict:
    return {"vertices": [[r, a] for r, a in shape.vertices]}


def shape_from_dict(data: dict, k_max: int = K_MAX_DEFAULT) -> PolygonShape:
    if not isinstance(data, dict) or "vertices" not in data:
        raise ValueError("shape record must contain a 'vertices' list")
    verts = data["vertices"]
    if (
        not isinstance(verts, list)
        or not all(isinstance(v, (list, tuple)) and len(v) == 2 for v in verts)
    ):
        raise ValueError("'vertices' must be a list of [radius, angle] pairs")
    shape = PolygonShape(tuple((float(r), float(a)) for r, a in verts))
    require_valid(shape, k_max)
    return shape


def save_shape(shape: PolygonShape, path) -> None:
    require_valid(shape, k_max=np.inf)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(shape_to_dict(shape), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_shape(path, k_max: int = K_MAX_DEFAULT) -> PolygonShape:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return shape_from_dict(data, k_max)
