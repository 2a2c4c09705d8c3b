"""Planar geometry foundation: wall frames, polygon predicates, hole cutting.

Every downstream stage works in wall-plane coordinates. A wall polygon gets
an orthonormal right-handed frame (u, v, normal) whose u axis runs
horizontally along the facade; probability maps, detected instances and
library-object fitting all live in that frame. Holes are axis-aligned
rectangles in frame coordinates, cut as additional interior rings.

Vertices are numpy arrays of shape (3,); rings are (N, 3) arrays, closed
implicitly (first vertex not repeated).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePolygon, HoleOutsideWall, HoleOverlap

WORLD_UP = np.array([0.0, 0.0, 1.0])

# Area below this is degenerate (m^2).
MIN_POLYGON_AREA = 1e-6
# Vertices of geometry we produce must sit on the wall plane this tightly (m).
PLANARITY_TOL = 1e-6
# Input models are accepted with this much planar noise (m).
INPUT_PLANARITY_TOL = 1e-3
# Boundary points count as inside within this distance (m).
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class Rect2:
    """Axis-aligned rectangle in wall-frame coordinates (meters)."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.u_max - self.u_min

    @property
    def height(self) -> float:
        return self.v_max - self.v_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersects(self, other: "Rect2") -> bool:
        """True if the closed rectangles share any point (touching counts)."""
        return not (self.u_max < other.u_min or other.u_max < self.u_min
                    or self.v_max < other.v_min or other.v_max < self.v_min)

    def union(self, other: "Rect2") -> "Rect2":
        return Rect2(min(self.u_min, other.u_min), min(self.v_min, other.v_min),
                     max(self.u_max, other.u_max), max(self.v_max, other.v_max))

    def corners(self) -> np.ndarray:
        """Corners in (u_min,v_min), (u_max,v_min), (u_max,v_max), (u_min,v_max) order."""
        return np.array([
            [self.u_min, self.v_min],
            [self.u_max, self.v_min],
            [self.u_max, self.v_max],
            [self.u_min, self.v_max],
        ])


@dataclass(frozen=True)
class PolygonWithHoles:
    """Planar polygon: one exterior ring plus zero or more hole rings."""

    exterior: np.ndarray
    interiors: tuple = ()

    def __post_init__(self):
        ext = np.asarray(self.exterior, dtype=float)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "interiors",
                           tuple(np.asarray(r, dtype=float) for r in self.interiors))
        for ring in (self.exterior, *self.interiors):
            if ring.ndim != 2 or ring.shape[1] != 3 or ring.shape[0] < 3:
                raise ValueError("ring must be an (N>=3, 3) array")
            if not np.all(np.isfinite(ring)):
                raise ValueError("ring has non-finite coordinates")

    def rings(self):
        yield self.exterior
        yield from self.interiors


@dataclass(frozen=True)
class WallFrame:
    """Orthonormal right-handed frame (u_axis, v_axis, normal) on a wall plane.

    For vertical walls u_axis is horizontal and v_axis points downward
    (raster row order); for horizontal surfaces u_axis follows the first
    polygon edge. Polygon frame coordinates span [0, u_extent] x [0, v_extent].
    """

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    normal: np.ndarray
    u_extent: float
    v_extent: float


def newell_normal(ring: np.ndarray) -> np.ndarray:
    """Area-weighted plane normal of a closed (possibly noisy) ring.

    Robust to small non-planarity; magnitude equals twice the ring area.
    """
    ring = np.asarray(ring, dtype=float)
    nxt = np.roll(ring, -1, axis=0)
    n = np.array([
        np.sum((ring[:, 1] - nxt[:, 1]) * (ring[:, 2] + nxt[:, 2])),
        np.sum((ring[:, 2] - nxt[:, 2]) * (ring[:, 0] + nxt[:, 0])),
        np.sum((ring[:, 0] - nxt[:, 0]) * (ring[:, 1] + nxt[:, 1])),
    ])
    return n


def ring_area(ring: np.ndarray) -> float:
    """Unsigned area of a planar 3D ring."""
    return 0.5 * float(np.linalg.norm(newell_normal(ring)))


def polygon_area(poly: PolygonWithHoles) -> float:
    """Exterior area minus the area of every hole."""
    return ring_area(poly.exterior) - sum(ring_area(r) for r in poly.interiors)


def wall_frame_from_polygon(poly: PolygonWithHoles) -> WallFrame:
    """Fit the projection frame for a wall polygon.

    The plane passes through the exterior-vertex centroid with the Newell
    normal; the frame origin is shifted to the minimal (u, v) corner of the
    polygon's bounding box so that all frame coordinates are non-negative.

    Raises DegeneratePolygon when the exterior has area <= 1e-6 m^2.
    """
    ext = poly.exterior
    n = newell_normal(ext)
    norm = np.linalg.norm(n)
    if norm <= 2.0 * MIN_POLYGON_AREA:
        raise DegeneratePolygon(f"exterior ring area {0.5 * norm:.3g} m^2 below threshold")
    n = n / norm

    u = np.cross(n, WORLD_UP)
    ulen = np.linalg.norm(u)
    if ulen < 1e-8:
        # Horizontal surface: fall back to the first non-degenerate edge.
        edge = ext[1] - ext[0]
        elen = np.linalg.norm(edge)
        if elen < 1e-12:
            raise DegeneratePolygon("first edge degenerate on horizontal surface")
        u = edge / elen
        # Re-orthogonalize against the normal (edge may be slightly off-plane).
        u = u - np.dot(u, n) * n
        u = u / np.linalg.norm(u)
    else:
        u = u / ulen
    v = np.cross(n, u)

    centroid = ext.mean(axis=0)
    rel = ext - centroid
    us = rel @ u
    vs = rel @ v
    u0, v0 = us.min(), vs.min()
    origin = centroid + u0 * u + v0 * v
    return WallFrame(origin=origin, u_axis=u, v_axis=v, normal=n,
                     u_extent=float(us.max() - u0), v_extent=float(vs.max() - v0))


def to_frame(p: np.ndarray, f: WallFrame) -> tuple:
    """World point(s) -> (u, v, w) frame coordinates; w is the normal offset.

    Scalars for a single point, arrays for an (N, 3) batch.
    """
    rel = np.asarray(p, dtype=float) - f.origin
    u, v, w = rel @ f.u_axis, rel @ f.v_axis, rel @ f.normal
    if rel.ndim == 1:
        return float(u), float(v), float(w)
    return u, v, w


def from_frame(u: float, v: float, w: float, f: WallFrame) -> np.ndarray:
    """Frame coordinates -> world point (inverse of to_frame)."""
    return f.origin + u * f.u_axis + v * f.v_axis + w * f.normal


def rings_in_frame(poly: PolygonWithHoles, f: WallFrame) -> list:
    """Project all rings to (u, v) frame coordinates, dropping the offset."""
    out = []
    for ring in poly.rings():
        rel = ring - f.origin
        out.append(np.column_stack([rel @ f.u_axis, rel @ f.v_axis]))
    return out


def max_plane_distance(poly: PolygonWithHoles, f: WallFrame) -> float:
    """Largest |normal offset| of any vertex from the frame plane."""
    worst = 0.0
    for ring in poly.rings():
        w = (ring - f.origin) @ f.normal
        worst = max(worst, float(np.abs(w).max()))
    return worst


def _on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    """True if 2D point p lies on segment a-b within tol."""
    ab = b - a
    ap = p - a
    L2 = ab @ ab
    if L2 == 0.0:
        return bool(np.hypot(*ap) <= tol)
    t = np.clip((ap @ ab) / L2, 0.0, 1.0)
    closest = a + t * ab
    return bool(np.hypot(*(p - closest)) <= tol)


def _ring_crossings(u: float, v: float, ring: np.ndarray) -> int:
    """Number of ring edges crossed by the ray from (u,v) toward +u."""
    count = 0
    n = len(ring)
    for i in range(n):
        a = ring[i]
        b = ring[(i + 1) % n]
        # Half-open rule on v avoids double-counting shared vertices.
        if (a[1] > v) != (b[1] > v):
            x = a[0] + (v - a[1]) / (b[1] - a[1]) * (b[0] - a[0])
            if x > u:
                count += 1
    return count


def point_in_polygon(u: float, v: float, rings_2d, tol: float = BOUNDARY_TOL) -> bool:
    """Even-odd test over all rings; boundary points count as inside."""
    p = np.array([u, v])
    for ring in rings_2d:
        n = len(ring)
        for i in range(n):
            if _on_segment(p, ring[i], ring[(i + 1) % n], tol):
                return True
    crossings = sum(_ring_crossings(u, v, ring) for ring in rings_2d)
    return crossings % 2 == 1


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """2D segment intersection, endpoints and collinear overlap included."""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0:
        return True

    def on_colinear(a, b, c):
        return (orient(a, b, c) == 0
                and min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    return (on_colinear(q1, q2, p1) or on_colinear(q1, q2, p2)
            or on_colinear(p1, p2, q1) or on_colinear(p1, p2, q2))


def _rect_intersects_ring(rect: Rect2, ring: np.ndarray) -> bool:
    """True if the rectangle boundary/area touches the ring boundary/area."""
    corners = rect.corners()
    edges = [(corners[i], corners[(i + 1) % 4]) for i in range(4)]
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        for p, q in edges:
            if _segments_intersect(p, q, a, b):
                return True
    # No edge contact: containment either way?
    if point_in_polygon(*ring[0], [corners]):
        return True
    if point_in_polygon(rect.u_min, rect.v_min, [ring]):
        return True
    return False


def _ring_signed_area_2d(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def cut_rectangle_hole(poly: PolygonWithHoles, hole: Rect2, f: WallFrame) -> PolygonWithHoles:
    """Add a rectangular interior ring in frame coordinates.

    The hole must be strictly inside the exterior ring and disjoint from all
    existing interiors. Corners are lifted to 3D on the frame plane, oriented
    opposite to the exterior ring.
    """
    rings2d = rings_in_frame(poly, f)
    ext2d = rings2d[0]

    corners2d = hole.corners()
    for cu, cv in corners2d:
        if not point_in_polygon(cu, cv, [ext2d], tol=0.0):
            raise HoleOutsideWall(f"hole corner ({cu:.3f}, {cv:.3f}) outside wall")
    n = len(ext2d)
    rect_edges = [(corners2d[i], corners2d[(i + 1) % 4]) for i in range(4)]
    for i in range(n):
        a, b = ext2d[i], ext2d[(i + 1) % n]
        for p, q in rect_edges:
            if _segments_intersect(p, q, a, b):
                raise HoleOutsideWall("hole touches the wall exterior ring")

    for ring2d in rings2d[1:]:
        if _rect_intersects_ring(hole, ring2d):
            raise HoleOverlap("hole intersects an existing interior ring")

    # Orient the new ring opposite to the exterior (hole winding).
    if _ring_signed_area_2d(ext2d) > 0:
        order = [0, 3, 2, 1]
    else:
        order = [0, 1, 2, 3]
    ring3d = np.array([from_frame(corners2d[i][0], corners2d[i][1], 0.0, f)
                       for i in order])
    return PolygonWithHoles(exterior=poly.exterior,
                            interiors=poly.interiors + (ring3d,))
