"""Planar polygon geometry for peg and hole cross-sections.

Units are millimeters throughout. Polygons are simple, counter-clockwise,
and centered inside a 40 mm x 40 mm canonical box. Insertability of a peg
into a hole cavity is decided by sampling the peg cross-section (interior
grid points plus boundary points, so thin corner pokes are never missed)
and testing every sample against the cavity polygon.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon as _ShapelyPolygon
from shapely.geometry.polygon import orient as _shapely_orient


class DegenerateGeometry(ValueError):
    """Raised when a polygon or a query loses its geometric meaning."""


class ShapeId(str, enum.Enum):
    ARROW = "arrow"
    CIRCLE = "circle"
    CROSS = "cross"
    DIAMOND = "diamond"
    HEXAGON = "hexagon"
    KEY = "key"
    LINE = "line"
    PENTAGON = "pentagon"
    U = "u"


# Largest coordinate magnitude a polygon vertex may carry, in mm.
_COORD_LIMIT = 1e4
# Points closer than this to an edge count as inside (point_in tie-break).
_EDGE_EPS = 1e-9


def signed_area(vertices: np.ndarray) -> float:
    """Shoelace signed area; positive for counter-clockwise winding."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_properly_intersect(p1, p2, q1, q2) -> bool:
    """True when open segments p1p2 and q1q2 cross or overlap collinearly."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) < 1e-12:
            return 0
        return 1 if v > 0 else -1

    o1 = orient(p1, p2, q1)
    o2 = orient(p1, p2, q2)
    o3 = orient(q1, q2, p1)
    o4 = orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    # Collinear overlap counts as a self-intersection too.
    if o1 == 0 and o2 == 0 and o3 == 0 and o4 == 0:
        lo_p, hi_p = sorted([tuple(p1), tuple(p2)])
        lo_q, hi_q = sorted([tuple(q1), tuple(q2)])
        return not (hi_p <= lo_q or hi_q <= lo_p)
    return False


@dataclass
class Polygon2:
    """Simple CCW polygon in the cross-section plane, coordinates in mm."""

    vertices: np.ndarray
    _area: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise DegenerateGeometry(f"need >= 3 vertices of dim 2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DegenerateGeometry("non-finite vertex coordinate")
        if np.max(np.abs(v)) >= _COORD_LIMIT:
            raise DegenerateGeometry("vertex coordinate magnitude >= 1e4 mm")
        area = signed_area(v)
        if area <= 0.0:
            raise DegenerateGeometry(f"winding must be CCW (signed area {area:.6g})")
        n = len(v)
        for i in range(n):
            a1, a2 = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                # Adjacent edges share an endpoint by construction; skip them.
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                if _segments_properly_intersect(a1, a2, v[j], v[(j + 1) % n]):
                    raise DegenerateGeometry(f"self-intersection between edges {i} and {j}")
        self.vertices = v
        self._area = area

    @property
    def area(self) -> float:
        return self._area

    def centroid(self) -> np.ndarray:
        """Area centroid of the polygon."""
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        cx = float(np.sum((x + xn) * cross)) / (6.0 * self._area)
        cy = float(np.sum((y + yn) * cross)) / (6.0 * self._area)
        return np.array([cx, cy])

    def bounds(self) -> tuple[float, float, float, float]:
        v = self.vertices
        return (
            float(v[:, 0].min()),
            float(v[:, 1].min()),
            float(v[:, 0].max()),
            float(v[:, 1].max()),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polygon2):
            return NotImplemented
        return self.vertices.shape == other.vertices.shape and bool(
            np.array_equal(self.vertices, other.vertices)
        )


def _regular_polygon(n: int, radius: float, phase_deg: float = 0.0) -> np.ndarray:
    angles = np.deg2rad(phase_deg) + 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([radius * np.cos(angles), radius * np.sin(angles)])


# Canonical vertex tables, all inside the 40 x 40 box, all CCW.
_W3 = 20.0 / 3.0  # half arm width used by cross and u


def _canonical_vertices(shape: ShapeId) -> np.ndarray:
    if shape is ShapeId.ARROW:
        return np.array(
            [
                (20, 0), (0, 20), (0, 8), (-20, 8),
                (-20, -8), (0, -8), (0, -20),
            ],
            dtype=np.float64,
        )
    if shape is ShapeId.CIRCLE:
        return _regular_polygon(32, 20.0)
    if shape is ShapeId.CROSS:
        w = _W3
        return np.array(
            [
                (20, -w), (20, w), (w, w), (w, 20), (-w, 20), (-w, w),
                (-20, w), (-20, -w), (-w, -w), (-w, -20), (w, -20), (w, -w),
            ],
            dtype=np.float64,
        )
    if shape is ShapeId.DIAMOND:
        return np.array([(20, 0), (0, 20), (-20, 0), (0, -20)], dtype=np.float64)
    if shape is ShapeId.HEXAGON:
        return _regular_polygon(6, 20.0)
    if shape is ShapeId.KEY:
        # Horizontal key: rectangular bow on the left, blade with two teeth.
        return np.array(
            [
                (-20, -10), (-6, -10), (-6, -2), (10, -2), (10, -8), (13, -8),
                (13, -2), (16, -2), (16, -8), (20, -8), (20, 6), (-6, 6),
                (-6, 10), (-20, 10),
            ],
            dtype=np.float64,
        )
    if shape is ShapeId.LINE:
        return np.array([(20, -4), (20, 4), (-20, 4), (-20, -4)], dtype=np.float64)
    if shape is ShapeId.PENTAGON:
        return _regular_polygon(5, 20.0, phase_deg=90.0)
    if shape is ShapeId.U:
        w = _W3
        return np.array(
            [
                (20, -20), (20, 20), (w, 20), (w, -w),
                (-w, -w), (-w, 20), (-20, 20), (-20, -20),
            ],
            dtype=np.float64,
        )
    raise DegenerateGeometry(f"unknown shape {shape!r}")


def build_shape(shape: ShapeId | str, scale: float = 1.0) -> Polygon2:
    """Canonical cross-section polygon for one of the nine shape ids."""
    if not isinstance(shape, ShapeId):
        shape = ShapeId(shape)
    if not (0.0 < scale <= 2.0):
        raise DegenerateGeometry(f"scale {scale} outside (0, 2]")
    return Polygon2(_canonical_vertices(shape) * scale)


def _to_shapely(poly: Polygon2) -> _ShapelyPolygon:
    return _ShapelyPolygon(poly.vertices)


def dilate(poly: Polygon2, offset: float) -> Polygon2:
    """Outward offset with miter joins; offset 0 is the identity."""
    if offset < 0.0:
        raise DegenerateGeometry(f"offset must be >= 0, got {offset}")
    if offset == 0.0:
        return Polygon2(poly.vertices.copy())
    grown = _to_shapely(poly).buffer(
        offset, join_style="mitre", mitre_limit=10.0
    )
    if grown.is_empty or grown.geom_type != "Polygon" or grown.interiors:
        raise DegenerateGeometry("dilation did not produce a simple polygon")
    grown = _shapely_orient(grown, sign=1.0)
    verts = np.asarray(grown.exterior.coords)[:-1]
    return Polygon2(verts)


def points_in(poly: Polygon2, points: np.ndarray) -> np.ndarray:
    """Even-odd ray casting (+x ray) for a batch of points.

    Points within 1e-9 mm of an edge count as inside. Returns a bool array.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v = poly.vertices
    a = v
    b = np.roll(v, -1, axis=0)
    px = pts[:, 0:1]  # (M,1)
    py = pts[:, 1:2]
    ay, by = a[:, 1][None, :], b[:, 1][None, :]
    ax, bx = a[:, 0][None, :], b[:, 0][None, :]
    # Half-open rule on y so a vertex crossing is counted once.
    straddle = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
    crossing = straddle & (px < x_cross)
    inside = (np.sum(crossing, axis=1) % 2).astype(bool)

    # Boundary tie-break: distance to each edge segment <= eps counts inside.
    ex, ey = bx - ax, by - ay
    seg_len2 = ex * ex + ey * ey
    t = ((px - ax) * ex + (py - ay) * ey) / np.where(seg_len2 == 0.0, 1.0, seg_len2)
    t = np.clip(t, 0.0, 1.0)
    dx = px - (ax + t * ex)
    dy = py - (ay + t * ey)
    on_edge = (dx * dx + dy * dy) <= _EDGE_EPS * _EDGE_EPS
    return inside | np.any(on_edge, axis=1)


def point_in(poly: Polygon2, point) -> bool:
    """Single-point convenience wrapper around points_in."""
    return bool(points_in(poly, np.asarray(point, dtype=np.float64).reshape(1, 2))[0])


def insertable_exact(peg: Polygon2, cavity: Polygon2, lateral_offset) -> bool:
    """Exact polygon containment: the shifted peg lies inside the cavity.

    The closed-form counterpart of the sampled contact_query predicate;
    boundary contact counts as insertable, matching the sampler's edge rule.
    """
    offset = np.asarray(lateral_offset, dtype=np.float64).reshape(2)
    moved = _ShapelyPolygon(peg.vertices + offset)
    return bool(_to_shapely(cavity).covers(moved))


def transform(poly: Polygon2, rotation_deg: float, translation) -> Polygon2:
    """Rotate about the area centroid, then translate. Preserves winding."""
    t = np.asarray(translation, dtype=np.float64).reshape(2)
    c = poly.centroid()
    th = math.radians(rotation_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    verts = (poly.vertices - c) @ rot.T + c + t
    return Polygon2(verts)


@dataclass(frozen=True)
class ContactQuery:
    """Result of testing a laterally offset peg against a hole cavity.

    blocked_centroid is the mean of the blocked (outside-cavity) samples in
    the shared cavity frame, i.e. after the lateral offset is applied; it is
    None when nothing is blocked.
    """

    insertable: bool
    blocked_fraction: float
    blocked_centroid: tuple[float, float] | None


# Peg sample clouds are deterministic per (vertices, pitch); cache them.
_SAMPLE_CACHE: dict[tuple[bytes, float], np.ndarray] = {}


def _peg_samples(peg: Polygon2, grid_pitch: float) -> np.ndarray:
    """Interior grid samples plus boundary samples of the peg polygon.

    The grid is anchored at integer multiples of the pitch in absolute
    coordinates so the cloud is translation-independent and deterministic.
    Boundary samples (vertices plus points every <= pitch along each edge)
    guarantee that corner pokes narrower than one grid cell still register.
    """
    key = (peg.vertices.tobytes(), grid_pitch)
    cached = _SAMPLE_CACHE.get(key)
    if cached is not None:
        return cached
    minx, miny, maxx, maxy = peg.bounds()
    xs = np.arange(math.ceil(minx / grid_pitch), math.floor(maxx / grid_pitch) + 1) * grid_pitch
    ys = np.arange(math.ceil(miny / grid_pitch), math.floor(maxy / grid_pitch) + 1) * grid_pitch
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    interior = grid[points_in(peg, grid)] if len(grid) else np.empty((0, 2))
    if len(interior) == 0:
        raise DegenerateGeometry("peg has no interior grid samples at this pitch")

    edges = []
    v = peg.vertices
    nxt = np.roll(v, -1, axis=0)
    for a, b in zip(v, nxt):
        length = float(np.hypot(*(b - a)))
        n = max(1, math.ceil(length / grid_pitch))
        ts = np.arange(n) / n
        edges.append(a[None, :] + ts[:, None] * (b - a)[None, :])
    boundary = np.vstack(edges)
    samples = np.vstack([interior, boundary])
    if len(_SAMPLE_CACHE) > 64:
        _SAMPLE_CACHE.clear()
    _SAMPLE_CACHE[key] = samples
    return samples


def contact_query(
    peg: Polygon2,
    cavity: Polygon2,
    lateral_offset,
    grid_pitch: float = 0.5,
) -> ContactQuery:
    """Test whether the peg, shifted by lateral_offset, fits inside the cavity.

    blocked_fraction is the fraction of all peg samples (interior grid plus
    boundary) that fall outside the cavity, so insertable is exactly
    blocked_fraction == 0. blocked_centroid is the mean of the blocked
    samples in cavity coordinates, None when nothing is blocked.
    """
    if not (0.1 <= grid_pitch <= 1.0):
        raise DegenerateGeometry(f"grid_pitch {grid_pitch} outside [0.1, 1.0]")
    offset = np.asarray(lateral_offset, dtype=np.float64).reshape(2)
    samples = _peg_samples(peg, grid_pitch) + offset
    outside = ~points_in(cavity, samples)
    n_out = int(np.sum(outside))
    fraction = n_out / len(samples)
    if n_out == 0:
        return ContactQuery(True, 0.0, None)
    centroid = samples[outside].mean(axis=0)
    return ContactQuery(False, fraction, (float(centroid[0]), float(centroid[1])))


def shape_catalog() -> list[dict]:
    """Canonical vertex table for every shape id, JSON-friendly."""
    out = []
    for shape in ShapeId:
        poly = build_shape(shape)
        out.append(
            {
                "shape": shape.value,
                "vertices_mm": [[float(x), float(y)] for x, y in poly.vertices],
                "area_mm2": poly.area,
            }
        )
    return out
