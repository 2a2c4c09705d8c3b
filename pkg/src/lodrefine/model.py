"""Semantic building model: JSON parsing/serialization, CityGML export, validation.

The canonical on-disk format is a compact JSON subset (.cm.json, schema in
data/citymodel.schema.json) that carries exactly the semantics needed for
facade refinement: thematic boundary surfaces, openings with a parent wall,
installations with a function code, confidence scores and timestamps.
CityGML 2.0 is export-only. Identifiers survive every transformation
verbatim; unknown attributes pass through opaquely.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from xml.etree import ElementTree as ET

import numpy as np

from . import geom
from .errors import DuplicateId, GeometryError, SchemaError, UnresolvedParent
from .geom import PolygonWithHoles


class SurfaceKind(enum.Enum):
    WallSurface = "WallSurface"
    RoofSurface = "RoofSurface"
    GroundSurface = "GroundSurface"


class OpeningKind(enum.Enum):
    Window = "Window"
    Door = "Door"


@dataclass(frozen=True)
class Surface:
    id: str
    kind: SurfaceKind
    geometry: PolygonWithHoles
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OpeningObject:
    id: str
    kind: OpeningKind
    parent_wall_id: str
    geometry: tuple            # faces, each a PolygonWithHoles
    confidence: float
    timestamp: str
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BuildingInstallation:
    id: str
    function_code: str
    geometry: tuple
    confidence: float
    timestamp: str
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Building:
    id: str
    lod: int
    surfaces: tuple = ()
    openings: tuple = ()
    installations: tuple = ()
    attributes: dict = field(default_factory=dict)

    def surface_by_id(self, sid: str) -> Surface | None:
        for s in self.surfaces:
            if s.id == sid:
                return s
        return None

    def walls(self):
        return [s for s in self.surfaces if s.kind is SurfaceKind.WallSurface]


@dataclass(frozen=True)
class BuildingModel:
    buildings: tuple = ()
    crs_label: str = ""
    metadata: dict = field(default_factory=dict)

    def all_ids(self) -> list:
        ids = []
        for b in self.buildings:
            ids.append(b.id)
            ids.extend(s.id for s in b.surfaces)
            ids.extend(o.id for o in b.openings)
            ids.extend(i.id for i in b.installations)
        return ids

    def find_wall(self, wall_id: str):
        """(building, surface) pair for a wall id, or (None, None)."""
        for b in self.buildings:
            s = b.surface_by_id(wall_id)
            if s is not None:
                return b, s
        return None, None


# ---------------------------------------------------------------------------
# parsing

def _require(cond, message):
    if not cond:
        raise SchemaError(message)


def _ring_from_json(obj, what) -> np.ndarray:
    _require(isinstance(obj, list) and len(obj) >= 3,
             f"{what}: ring must be a list of >= 3 vertices")
    for v in obj:
        _require(isinstance(v, list) and len(v) == 3
                 and all(isinstance(x, (int, float)) for x in v),
                 f"{what}: vertex must be [x, y, z]")
    arr = np.asarray(obj, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{what}: non-finite coordinates")
    return arr


def _polygon_from_json(obj, what) -> PolygonWithHoles:
    _require(isinstance(obj, dict), f"{what}: polygon must be an object")
    _require("exterior" in obj, f"{what}: missing 'exterior'")
    ext = _ring_from_json(obj["exterior"], what)
    interiors = tuple(_ring_from_json(r, what) for r in obj.get("interiors", []))
    try:
        return PolygonWithHoles(exterior=ext, interiors=interiors)
    except ValueError as exc:
        raise GeometryError(f"{what}: {exc}") from None


def _check_surface_geometry(poly: PolygonWithHoles, what):
    try:
        frame = geom.wall_frame_from_polygon(poly)
    except geom.DegeneratePolygon as exc:
        raise GeometryError(f"{what}: {exc}") from None
    worst = geom.max_plane_distance(poly, frame)
    if worst > geom.INPUT_PLANARITY_TOL:
        raise GeometryError(
            f"{what}: vertices deviate {worst:.2g} m from plane "
            f"(limit {geom.INPUT_PLANARITY_TOL} m)")


def _faces_from_json(obj, what) -> tuple:
    _require(isinstance(obj, list), f"{what}: 'faces' must be a list")
    return tuple(_polygon_from_json(f, what) for f in obj)


def parse_model(data: bytes | str) -> BuildingModel:
    """Parse a .cm.json document into a validated BuildingModel."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    _require(isinstance(doc, dict), "document root must be an object")
    _require(isinstance(doc.get("buildings"), list), "missing 'buildings' list")

    seen = set()

    def claim(obj_id, what):
        _require(isinstance(obj_id, str) and obj_id, f"{what}: id must be a non-empty string")
        if obj_id in seen:
            raise DuplicateId(f"duplicate id {obj_id!r}")
        seen.add(obj_id)
        return obj_id

    buildings = []
    for bj in doc["buildings"]:
        _require(isinstance(bj, dict), "building must be an object")
        bid = claim(bj.get("id"), "building")
        lod = bj.get("lod")
        _require(lod in (1, 2, 3), f"building {bid}: lod must be 1, 2 or 3")

        surfaces = []
        for sj in bj.get("surfaces", []):
            _require(isinstance(sj, dict), f"building {bid}: surface must be an object")
            sid = claim(sj.get("id"), "surface")
            kind = sj.get("kind")
            _require(kind in SurfaceKind.__members__,
                     f"surface {sid}: kind must be one of "
                     f"{sorted(SurfaceKind.__members__)}")
            poly = _polygon_from_json(sj, f"surface {sid}")
            _check_surface_geometry(poly, f"surface {sid}")
            surfaces.append(Surface(id=sid, kind=SurfaceKind[kind], geometry=poly,
                                    attributes=dict(sj.get("attributes", {}))))

        openings = []
        for oj in bj.get("openings", []):
            _require(isinstance(oj, dict), f"building {bid}: opening must be an object")
            oid = claim(oj.get("id"), "opening")
            kind = oj.get("kind")
            _require(kind in OpeningKind.__members__,
                     f"opening {oid}: kind must be Window or Door")
            _require(isinstance(oj.get("parent_wall_id"), str),
                     f"opening {oid}: missing parent_wall_id")
            openings.append(OpeningObject(
                id=oid, kind=OpeningKind[kind],
                parent_wall_id=oj["parent_wall_id"],
                geometry=_faces_from_json(oj.get("faces", []), f"opening {oid}"),
                confidence=float(oj.get("confidence", 1.0)),
                timestamp=str(oj.get("timestamp", "")),
                attributes=dict(oj.get("attributes", {}))))

        installations = []
        for ij in bj.get("installations", []):
            _require(isinstance(ij, dict), f"building {bid}: installation must be an object")
            iid = claim(ij.get("id"), "installation")
            _require(isinstance(ij.get("function_code"), str),
                     f"installation {iid}: missing function_code")
            installations.append(BuildingInstallation(
                id=iid, function_code=ij["function_code"],
                geometry=_faces_from_json(ij.get("faces", []), f"installation {iid}"),
                confidence=float(ij.get("confidence", 1.0)),
                timestamp=str(ij.get("timestamp", "")),
                attributes=dict(ij.get("attributes", {}))))

        buildings.append(Building(id=bid, lod=int(lod), surfaces=tuple(surfaces),
                                  openings=tuple(openings),
                                  installations=tuple(installations),
                                  attributes=dict(bj.get("attributes", {}))))
    return BuildingModel(buildings=tuple(buildings),
                         crs_label=str(doc.get("crs", "")),
                         metadata=dict(doc.get("metadata", {})))


def load_model(path) -> BuildingModel:
    """Parse a building model from a .cm.json file path."""
    with open(path, "rb") as f:
        return parse_model(f.read())


# ---------------------------------------------------------------------------
# serialization

def _f(x: float) -> float:
    """Quantize to 9 significant digits (the documented file precision)."""
    return float(f"{float(x):.9g}")


def _ring_to_json(ring: np.ndarray) -> list:
    return [[_f(v[0]), _f(v[1]), _f(v[2])] for v in ring]


def _polygon_to_json(poly: PolygonWithHoles) -> dict:
    out = {"exterior": _ring_to_json(poly.exterior)}
    if poly.interiors:
        out["interiors"] = [_ring_to_json(r) for r in poly.interiors]
    return out


def serialize_model(m: BuildingModel) -> bytes:
    """Deterministic .cm.json bytes: fixed key order, 9-digit floats."""
    doc = {"crs": m.crs_label}
    if m.metadata:
        doc["metadata"] = {k: m.metadata[k] for k in sorted(m.metadata)}
    doc["buildings"] = []
    for b in m.buildings:
        bj = {"id": b.id, "lod": b.lod}
        if b.attributes:
            bj["attributes"] = {k: b.attributes[k] for k in sorted(b.attributes)}
        bj["surfaces"] = []
        for s in b.surfaces:
            sj = {"id": s.id, "kind": s.kind.value}
            sj.update(_polygon_to_json(s.geometry))
            if s.attributes:
                sj["attributes"] = {k: s.attributes[k] for k in sorted(s.attributes)}
            bj["surfaces"].append(sj)
        bj["openings"] = []
        for o in b.openings:
            bj["openings"].append({
                "id": o.id, "kind": o.kind.value,
                "parent_wall_id": o.parent_wall_id,
                "faces": [_polygon_to_json(p) for p in o.geometry],
                "confidence": _f(o.confidence),
                "timestamp": o.timestamp,
                **({"attributes": {k: o.attributes[k] for k in sorted(o.attributes)}}
                   if o.attributes else {}),
            })
        bj["installations"] = []
        for i in b.installations:
            bj["installations"].append({
                "id": i.id, "function_code": i.function_code,
                "faces": [_polygon_to_json(p) for p in i.geometry],
                "confidence": _f(i.confidence),
                "timestamp": i.timestamp,
                **({"attributes": {k: i.attributes[k] for k in sorted(i.attributes)}}
                   if i.attributes else {}),
            })
        doc["buildings"].append(bj)
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def model_equal(a: BuildingModel, b: BuildingModel) -> bool:
    """Structural equality (exact coordinates, ids, attributes)."""
    def poly_eq(p, q):
        return (np.array_equal(p.exterior, q.exterior)
                and len(p.interiors) == len(q.interiors)
                and all(np.array_equal(r, s) for r, s in zip(p.interiors, q.interiors)))

    def faces_eq(p, q):
        return len(p) == len(q) and all(poly_eq(x, y) for x, y in zip(p, q))

    if (a.crs_label != b.crs_label or a.metadata != b.metadata
            or len(a.buildings) != len(b.buildings)):
        return False
    for ba, bb in zip(a.buildings, b.buildings):
        if (ba.id, ba.lod, ba.attributes) != (bb.id, bb.lod, bb.attributes):
            return False
        if len(ba.surfaces) != len(bb.surfaces) or len(ba.openings) != len(bb.openings) \
                or len(ba.installations) != len(bb.installations):
            return False
        for sa, sb in zip(ba.surfaces, bb.surfaces):
            if (sa.id, sa.kind, sa.attributes) != (sb.id, sb.kind, sb.attributes) \
                    or not poly_eq(sa.geometry, sb.geometry):
                return False
        for oa, ob in zip(ba.openings, bb.openings):
            if (oa.id, oa.kind, oa.parent_wall_id, oa.confidence, oa.timestamp,
                    oa.attributes) != (ob.id, ob.kind, ob.parent_wall_id,
                                       ob.confidence, ob.timestamp, ob.attributes) \
                    or not faces_eq(oa.geometry, ob.geometry):
                return False
        for ia, ib in zip(ba.installations, bb.installations):
            if (ia.id, ia.function_code, ia.confidence, ia.timestamp,
                    ia.attributes) != (ib.id, ib.function_code, ib.confidence,
                                       ib.timestamp, ib.attributes) \
                    or not faces_eq(ia.geometry, ib.geometry):
                return False
    return True


# ---------------------------------------------------------------------------
# CityGML 2.0 export

_NS = {
    "core": "http://www.opengis.net/citygml/2.0",
    "bldg": "http://www.opengis.net/citygml/building/2.0",
    "gen": "http://www.opengis.net/citygml/generics/2.0",
    "gml": "http://www.opengis.net/gml",
    "xsi": "http://www.w3.org/2001/XMLSchema-instance",
}


def _pos_list(ring: np.ndarray) -> str:
    return " ".join(f"{_f(c):.9g}" for v in ring for c in v)


def _gml_polygon(parent, poly: PolygonWithHoles, gml_id: str):
    pe = ET.SubElement(parent, "gml:Polygon", {"gml:id": gml_id})
    outer = ET.SubElement(ET.SubElement(pe, "gml:exterior"), "gml:LinearRing")
    ET.SubElement(outer, "gml:posList", {"srsDimension": "3"}).text = \
        _pos_list(np.vstack([poly.exterior, poly.exterior[:1]]))
    for ring in poly.interiors:
        inner = ET.SubElement(ET.SubElement(pe, "gml:interior"), "gml:LinearRing")
        ET.SubElement(inner, "gml:posList", {"srsDimension": "3"}).text = \
            _pos_list(np.vstack([ring, ring[:1]]))


def _multi_surface(parent, prop_tag, faces, gml_id_base):
    prop = ET.SubElement(parent, prop_tag)
    ms = ET.SubElement(prop, "gml:MultiSurface")
    for k, poly in enumerate(faces):
        member = ET.SubElement(ms, "gml:surfaceMember")
        _gml_polygon(member, poly, f"{gml_id_base}-face-{k}")


def _generic_attributes(parent, confidence, timestamp):
    conf = ET.SubElement(parent, "gen:doubleAttribute", {"name": "confidence"})
    ET.SubElement(conf, "gen:value").text = f"{_f(confidence):.9g}"
    if timestamp:
        ts = ET.SubElement(parent, "gen:stringAttribute", {"name": "timestamp"})
        ET.SubElement(ts, "gen:value").text = timestamp


def export_citygml(m: BuildingModel) -> bytes:
    """Render the model as a CityGML 2.0 document (UTF-8 XML bytes)."""
    root = ET.Element("core:CityModel",
                      {f"xmlns:{p}": uri for p, uri in _NS.items()})
    if m.crs_label:
        root.set("srsName", m.crs_label)

    for b in m.buildings:
        member = ET.SubElement(root, "core:cityObjectMember")
        be = ET.SubElement(member, "bldg:Building", {"gml:id": b.id})
        for key in sorted(b.attributes):
            val = b.attributes[key]
            if isinstance(val, (int, float)) and not isinstance(val, bool):
                attr = ET.SubElement(be, "gen:doubleAttribute", {"name": key})
                ET.SubElement(attr, "gen:value").text = f"{_f(val):.9g}"
            else:
                attr = ET.SubElement(be, "gen:stringAttribute", {"name": key})
                ET.SubElement(attr, "gen:value").text = str(val)

        wall_ids = {s.id for s in b.surfaces if s.kind is SurfaceKind.WallSurface}
        for o in b.openings:
            if o.parent_wall_id not in wall_ids:
                raise UnresolvedParent(
                    f"opening {o.id}: parent wall {o.parent_wall_id!r} not in building {b.id}")

        geom_prop = f"bldg:lod{max(b.lod, 2)}MultiSurface"
        for s in b.surfaces:
            bounded = ET.SubElement(be, "bldg:boundedBy")
            se = ET.SubElement(bounded, f"bldg:{s.kind.value}", {"gml:id": s.id})
            _multi_surface(se, geom_prop, [s.geometry], f"{s.id}-geom")
            for o in b.openings:
                if o.parent_wall_id != s.id:
                    continue
                op_prop = ET.SubElement(se, "bldg:opening")
                oe = ET.SubElement(op_prop, f"bldg:{o.kind.value}", {"gml:id": o.id})
                _multi_surface(oe, "bldg:lod3MultiSurface", o.geometry, f"{o.id}-geom")
                _generic_attributes(oe, o.confidence, o.timestamp)

        for inst in b.installations:
            prop = ET.SubElement(be, "bldg:outerBuildingInstallation")
            ie = ET.SubElement(prop, "bldg:BuildingInstallation", {"gml:id": inst.id})
            ET.SubElement(ie, "bldg:function").text = inst.function_code.split()[0]
            _multi_surface(ie, "bldg:lod3Geometry", inst.geometry, f"{inst.id}-geom")
            _generic_attributes(ie, inst.confidence, inst.timestamp)

    body = ET.tostring(root, encoding="unicode")
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n{body}\n').encode("utf-8")


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Finding:
    building_id: str
    kind: str        # planarity | non_manifold_edge | duplicate_id | confidence_range
    subject: str
    message: str


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.findings

    def to_json(self) -> list:
        return [{"building": f.building_id, "kind": f.kind,
                 "subject": f.subject, "message": f.message}
                for f in self.findings]

    def format_text(self) -> str:
        if self.clean:
            return "model valid: no findings\n"
        lines = [f"{f.building_id}: [{f.kind}] {f.subject}: {f.message}"
                 for f in self.findings]
        return "\n".join(lines) + "\n"


# Edge endpoints are matched after quantization to 1 micrometer.
_EDGE_QUANTUM = 1e-6


def _edge_key(a: np.ndarray, b: np.ndarray):
    ka = tuple(int(round(c / _EDGE_QUANTUM)) for c in a)
    kb = tuple(int(round(c / _EDGE_QUANTUM)) for c in b)
    return (ka, kb) if ka <= kb else (kb, ka)


def _ring_edges(ring: np.ndarray):
    n = len(ring)
    for i in range(n):
        yield _edge_key(ring[i], ring[(i + 1) % n])


def validate_model(m: BuildingModel) -> ValidationReport:
    """Check planarity, shell watertightness, id uniqueness, confidence ranges."""
    report = ValidationReport()

    seen = {}
    for oid in m.all_ids():
        seen[oid] = seen.get(oid, 0) + 1
    for oid, count in seen.items():
        if count > 1:
            report.findings.append(Finding("", "duplicate_id", oid,
                                           f"id used {count} times"))

    for b in m.buildings:
        for s in b.surfaces:
            try:
                frame = geom.wall_frame_from_polygon(s.geometry)
            except geom.DegeneratePolygon as exc:
                report.findings.append(Finding(b.id, "planarity", s.id, str(exc)))
                continue
            worst = geom.max_plane_distance(s.geometry, frame)
            if worst > geom.INPUT_PLANARITY_TOL:
                report.findings.append(Finding(
                    b.id, "planarity", s.id,
                    f"vertex {worst:.2g} m off plane (limit {geom.INPUT_PLANARITY_TOL} m)"))

        edge_count = {}

        def add_edges(poly):
            for ring in poly.rings():
                for key in _ring_edges(ring):
                    edge_count[key] = edge_count.get(key, 0) + 1

        for s in b.surfaces:
            add_edges(s.geometry)
        for o in b.openings:
            for face in o.geometry:
                add_edges(face)
        for inst in b.installations:
            for face in inst.geometry:
                add_edges(face)

        for (ka, kb), count in edge_count.items():
            if count != 2:
                pa = tuple(round(c * _EDGE_QUANTUM, 6) for c in ka)
                pb = tuple(round(c * _EDGE_QUANTUM, 6) for c in kb)
                report.findings.append(Finding(
                    b.id, "non_manifold_edge", f"{pa}-{pb}",
                    f"edge shared by {count} faces (expected 2)"))

        for o in b.openings:
            if not (0.0 <= o.confidence <= 1.0):
                report.findings.append(Finding(b.id, "confidence_range", o.id,
                                               f"confidence {o.confidence} outside [0, 1]"))
        for inst in b.installations:
            if not (0.0 <= inst.confidence <= 1.0):
                report.findings.append(Finding(b.id, "confidence_range", inst.id,
                                               f"confidence {inst.confidence} outside [0, 1]"))
    return report
