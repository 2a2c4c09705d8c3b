"""Geometry reconstruction from detected instances.

Opening instances cut rectangular holes into their wall; a pre-defined
library object (one unit mesh per class) is fitted into each instance
by axis-aligned scaling in the wall frame: u and v stretch to the
instance rectangle, w to the configured depth.  The four junction
points of the unit mesh — the corners of its ``w = 0`` face — land
exactly on the corners of the hole, which makes the combined shell
watertight: opening meshes are open tubes whose front rim pairs with
the hole ring, installation meshes are closed boxes protruding outward
from the wall plane.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cloud import FacadeClass, parse_class_name
from .errors import ClassMismatch, FormatError, GeometryError, HoleOutsideWall, HoleOverlap
from .fusion import INSTALLATION_CLASSES, OPENING_CLASSES, OpeningInstance
from .geom import PolygonWithHoles, Rect2, WallFrame, cut_rectangle_hole, from_frame, newell_normal
from .model import Surface

DEFAULT_OPENING_DEPTH = 0.15
DEFAULT_INSTALLATION_DEPTH = 0.3

#: Junction points of every unit mesh, in Rect2.corners() order.
UNIT_CORNERS = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
])


@dataclass(frozen=True)
class LibraryObject:
    """Unit-cube mesh for one facade class, with 4 junction vertices."""

    cls: FacadeClass
    faces: tuple                 # of (K, 3) float arrays in [0, 1]^3
    junction_indices: tuple      # 4 indices into the flattened vertex list
    default_depth: float

    def __post_init__(self):
        object.__setattr__(self, "faces",
                           tuple(np.asarray(f, dtype=np.float64) for f in self.faces))
        flat = self.flat_vertices()
        if len(self.junction_indices) != 4:
            raise GeometryError("library object needs exactly 4 junction indices")
        if max(self.junction_indices) >= len(flat) or min(self.junction_indices) < 0:
            raise GeometryError("junction index out of range")
        junctions = flat[list(self.junction_indices)]
        if not np.allclose(junctions, UNIT_CORNERS, atol=1e-9, rtol=0.0):
            raise GeometryError(
                "junction points must be the w=0 unit-square corners in "
                "(0,0),(1,0),(1,1),(0,1) order")
        for f in self.faces:
            if f.ndim != 2 or f.shape[0] < 3 or f.shape[1] != 3:
                raise GeometryError("library faces must be (K>=3, 3) vertex arrays")
            if f.min() < -1e-9 or f.max() > 1.0 + 1e-9:
                raise GeometryError("library vertices must lie in the unit cube")
            _check_planar(f)
        if self.default_depth <= 0.0:
            raise GeometryError("default_depth must be positive")

    def flat_vertices(self) -> np.ndarray:
        return np.vstack(self.faces)

    def junction_points(self) -> np.ndarray:
        return self.flat_vertices()[list(self.junction_indices)]


def _check_planar(face: np.ndarray):
    n = newell_normal(face)
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise GeometryError("degenerate library face")
    n = n / norm
    d = (face - face[0]) @ n
    if np.abs(d).max() > 1e-9:
        raise GeometryError("library face not planar within 1e-9")


@dataclass
class PlacedObject:
    """A library object scaled into an instance, in world coordinates."""

    cls: FacadeClass
    faces: tuple                 # of PolygonWithHoles
    confidence: float
    source_instance: OpeningInstance
    junctions: np.ndarray = field(default=None)  # (4, 3) world points


# ---------------------------------------------------------------------------
# library file

def parse_library(data: bytes | str) -> dict:
    """Load a library JSON: list of {class, faces, junction_indices, default_depth}."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        rows = json.loads(data)
    except json.JSONDecodeError as exc:
        raise FormatError(f"library is not valid JSON: {exc}") from None
    if not isinstance(rows, list):
        raise FormatError("library JSON must be an array of objects")
    lib = {}
    for row in rows:
        try:
            cls = parse_class_name(row["class"])
            obj = LibraryObject(
                cls=cls,
                faces=tuple(np.asarray(f, dtype=np.float64) for f in row["faces"]),
                junction_indices=tuple(int(i) for i in row["junction_indices"]),
                default_depth=float(row["default_depth"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad library entry: {exc}") from None
        if cls in lib:
            raise FormatError(f"duplicate library entry for class {cls.value!r}")
        lib[cls] = obj
    return lib


def load_library(path) -> dict:
    with open(path, "rb") as f:
        return parse_library(f.read())


def default_library() -> dict:
    """The library shipped with the package (one object per class)."""
    from importlib import resources

    data = resources.files("lodrefine").joinpath("data/default_library.json").read_bytes()
    return parse_library(data)


# ---------------------------------------------------------------------------
# fitting

def _stretch(x: float, lo: float, hi: float) -> float:
    """Affine [0,1] -> [lo,hi]; endpoints map exactly onto lo/hi."""
    if x == 0.0:
        return lo
    if x == 1.0:
        return hi
    return lo + x * (hi - lo)


def _place(inst: OpeningInstance, lib: LibraryObject, frame: WallFrame,
           depth_signed: float) -> PlacedObject:
    rect = inst.rect
    faces = []
    for face in lib.faces:
        pts = np.array([
            from_frame(_stretch(u, rect.u_min, rect.u_max),
                       _stretch(v, rect.v_min, rect.v_max),
                       w * depth_signed, frame)
            for u, v, w in face])
        faces.append(PolygonWithHoles(exterior=pts))
    junctions = np.array([
        from_frame(_stretch(u, rect.u_min, rect.u_max),
                   _stretch(v, rect.v_min, rect.v_max),
                   w * depth_signed, frame)
        for u, v, w in lib.junction_points()])
    return PlacedObject(cls=inst.cls, faces=tuple(faces), confidence=inst.confidence,
                        source_instance=inst, junctions=junctions)


def fit_object(inst: OpeningInstance, lib: LibraryObject, frame: WallFrame,
               depth: float | None = None) -> PlacedObject:
    """Fit an opening-class library object into an instance rectangle.

    The mesh recesses behind the wall plane (negative frame offset); the
    junction points land exactly on the hole corners.
    """
    if lib.cls is not inst.cls:
        raise ClassMismatch(f"library object is {lib.cls.value}, instance is {inst.cls.value}")
    if inst.cls not in OPENING_CLASSES:
        raise ClassMismatch(f"{inst.cls.value} is not an opening class")
    d = lib.default_depth if depth is None else float(depth)
    return _place(inst, lib, frame, -d)


def build_installation_geometry(inst: OpeningInstance, lib: LibraryObject,
                                frame: WallFrame, depth: float | None = None) -> PlacedObject:
    """Scale an installation mesh to its instance, protruding outward."""
    if lib.cls is not inst.cls:
        raise ClassMismatch(f"library object is {lib.cls.value}, instance is {inst.cls.value}")
    if inst.cls not in INSTALLATION_CLASSES:
        raise ClassMismatch(f"{inst.cls.value} is not an installation class")
    d = lib.default_depth if depth is None else float(depth)
    return _place(inst, lib, frame, d)


# ---------------------------------------------------------------------------
# hole cutting

def inset_rect_to_frame(rect: Rect2, frame: WallFrame, margin: float) -> Rect2:
    """Pull rectangle edges lying on the wall border inward by ``margin``.

    Raster-derived rectangles are clamped to the wall extents, but an
    interior ring touching the exterior ring would not leave a simple
    polygon (ground-touching underpasses hit this).  Edges on the border
    move inward by ``margin``; the rectangle is returned unchanged when
    nothing touches or when the inset would collapse it.
    """
    tol = 1e-9
    u0, v0, u1, v1 = rect.u_min, rect.v_min, rect.u_max, rect.v_max
    if u0 <= tol:
        u0 = margin
    if u1 >= frame.u_extent - tol:
        u1 = frame.u_extent - margin
    if v0 <= tol:
        v0 = margin
    if v1 >= frame.v_extent - tol:
        v1 = frame.v_extent - margin
    if (u0, v0, u1, v1) == (rect.u_min, rect.v_min, rect.u_max, rect.v_max):
        return rect
    if u1 - u0 <= tol or v1 - v0 <= tol:
        return rect
    return Rect2(u_min=u0, v_min=v0, u_max=u1, v_max=v1)


def merge_opening_instances(instances) -> list:
    """Merge overlapping opening rectangles into bounding rectangles.

    Merged confidence is the area-weighted mean of the members; the
    class follows the largest member.  Installation instances pass
    through untouched.  Output keeps the (class, u_min, v_min) order.
    """
    from .cloud import CLASS_INDEX

    openings = [i for i in instances if i.cls in OPENING_CLASSES]
    others = [i for i in instances if i.cls not in OPENING_CLASSES]

    clusters = [[i] for i in openings]
    merged = True
    while merged:
        merged = False
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                ra = _cluster_rect(clusters[a])
                rb = _cluster_rect(clusters[b])
                if ra.intersects(rb):
                    clusters[a] = clusters[a] + clusters[b]
                    del clusters[b]
                    merged = True
                    break
            if merged:
                break

    out = list(others)
    for members in clusters:
        if len(members) == 1:
            out.append(members[0])
            continue
        rect = _cluster_rect(members)
        areas = [m.rect.area for m in members]
        conf = sum(m.confidence * a for m, a in zip(members, areas)) / sum(areas)
        lead = max(members, key=lambda m: (m.rect.area, -CLASS_INDEX[m.cls]))
        out.append(OpeningInstance(
            cls=lead.cls, rect=rect, confidence=conf, wall_id=lead.wall_id,
            pixel_count=sum(m.pixel_count for m in members)))
    out.sort(key=lambda o: (CLASS_INDEX[o.cls], o.rect.u_min, o.rect.v_min))
    return out


def _cluster_rect(members) -> Rect2:
    rect = members[0].rect
    for m in members[1:]:
        rect = rect.union(m.rect)
    return rect


def cut_openings(wall: Surface, instances, frame: WallFrame):
    """Cut merged opening rectangles out of a wall surface.

    Returns the wall with added interior rings (same id, same exterior)
    and the list of rectangles actually cut; instances whose hole does
    not fit (outside the wall, or overlapping an existing hole) are
    skipped.
    """
    geometry = wall.geometry
    cut = []
    for inst in merge_opening_instances(instances):
        if inst.cls not in OPENING_CLASSES:
            continue
        try:
            geometry = cut_rectangle_hole(geometry, inst.rect, frame)
        except (HoleOutsideWall, HoleOverlap):
            continue
        cut.append(inst.rect)
    new_wall = Surface(id=wall.id, kind=wall.kind, geometry=geometry,
                       attributes=dict(wall.attributes))
    return new_wall, cut
