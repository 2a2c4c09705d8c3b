"""Semantic embedding of reconstructed objects into the building model.

Each facade class maps to a CityGML 2.0 target: windows and doors
become wall openings, underpasses and all installations become
BuildingInstallation features with their function code.  Underpasses
additionally cut the wall like an opening.  Embedded objects carry a
confidence score and an acquisition timestamp as generic attributes.

Ground, roof, and wall surfaces are never position-refined; all
pre-existing identifiers, geometry, and attributes pass through
unchanged.  Buildings are promoted to LoD 3 on first embedding, with
the prior level recorded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .cloud import FacadeClass
from .errors import UnmappedClass, UnresolvedWall
from .fusion import OPENING_CLASSES
from .geom import cut_rectangle_hole, wall_frame_from_polygon
from .model import (
    Building,
    BuildingInstallation,
    BuildingModel,
    OpeningKind,
    OpeningObject,
    Surface,
)
from .reconstruct import PlacedObject


@dataclass(frozen=True)
class ClassMapping:
    """One row of the facade-class/CityGML mapping table."""

    facade_class: FacadeClass
    citygml_class: str
    lods: frozenset
    function_code: str | None
    refinable: bool
    carries_confidence: bool
    proposed: bool = False


_ALL_LODS = frozenset({1, 2, 3, 4})
_LOD3 = frozenset({3, 4})


def _row(cls, citygml, lods, code=None, refinable=True, confidence=True, proposed=False):
    return ClassMapping(facade_class=cls, citygml_class=citygml, lods=lods,
                        function_code=code, refinable=refinable,
                        carries_confidence=confidence, proposed=proposed)


#: The full mapping table; function codes follow the CityGML 2.0 building
#: installation code list, with proposed additions for classes absent there.
CLASS_TABLE = {
    FacadeClass.GroundSurface: _row(FacadeClass.GroundSurface, "GroundSurface",
                                    _ALL_LODS, refinable=False, confidence=False),
    FacadeClass.RoofSurface: _row(FacadeClass.RoofSurface, "RoofSurface",
                                  _ALL_LODS, refinable=False, confidence=False),
    FacadeClass.Wall: _row(FacadeClass.Wall, "WallSurface",
                           _ALL_LODS, refinable=False, confidence=True),
    FacadeClass.Window: _row(FacadeClass.Window, "Window", _LOD3),
    FacadeClass.Door: _row(FacadeClass.Door, "Door", _LOD3),
    FacadeClass.Underpass: _row(FacadeClass.Underpass, "BuildingInstallation",
                                _LOD3, "1002 underpass"),
    FacadeClass.Balcony: _row(FacadeClass.Balcony, "BuildingInstallation",
                              _LOD3, "1000 balcony"),
    FacadeClass.Molding: _row(FacadeClass.Molding, "BuildingInstallation",
                              _LOD3, "1016 molding", proposed=True),
    FacadeClass.Deco: _row(FacadeClass.Deco, "BuildingInstallation",
                           _LOD3, "1017 deco", proposed=True),
    FacadeClass.Column: _row(FacadeClass.Column, "BuildingInstallation",
                             _LOD3, "1011 column"),
    FacadeClass.Arch: _row(FacadeClass.Arch, "BuildingInstallation",
                           _LOD3, "1008 arch"),
    FacadeClass.Drainpipe: _row(FacadeClass.Drainpipe, "BuildingInstallation",
                                _LOD3, "1018 drainpipe", proposed=True),
    FacadeClass.Stairs: _row(FacadeClass.Stairs, "BuildingInstallation",
                             _LOD3, "1060 stairs"),
    FacadeClass.Blinds: _row(FacadeClass.Blinds, "BuildingInstallation",
                             _LOD3, "1019 blinds", proposed=True),
}


def class_to_citygml(c: FacadeClass) -> ClassMapping:
    """The mapping row for a facade class; Other has no CityGML target."""
    if c not in CLASS_TABLE:
        raise UnmappedClass(f"facade class {c.value!r} has no CityGML mapping")
    return CLASS_TABLE[c]


def is_refinable(c: FacadeClass) -> bool:
    """Whether detections of this class may alter model geometry."""
    row = CLASS_TABLE.get(c)
    return bool(row and row.refinable)


# ---------------------------------------------------------------------------
# model transforms

def _fresh_id(model: BuildingModel, wall_id: str, cls: FacadeClass) -> str:
    taken = set(model.all_ids())
    k = 1
    while f"{wall_id}-{cls.value}-{k}" in taken:
        k += 1
    return f"{wall_id}-{cls.value}-{k}"


def _promote(building: Building) -> Building:
    if building.lod >= 3:
        return building
    attrs = dict(building.attributes)
    attrs.setdefault("prior_lod", building.lod)
    return replace(building, lod=3, attributes=attrs)


def _swap_building(model: BuildingModel, old: Building, new: Building) -> BuildingModel:
    return replace(model, buildings=tuple(new if b is old else b
                                          for b in model.buildings))


def embed_opening(model: BuildingModel, wall_id: str, placed: PlacedObject,
                  timestamp: str) -> BuildingModel:
    """Cut the opening into its wall and append the fitted object.

    Windows and doors become openings of the wall; underpasses become a
    BuildingInstallation (function "1002 underpass") and still cut the
    wall.  Returns a new model; the input is not modified.  A hole that
    does not fit raises HoleOutsideWall/HoleOverlap for the caller to
    skip and record.
    """
    if placed.cls not in OPENING_CLASSES:
        raise UnmappedClass(f"{placed.cls.value} is not an opening class")
    building, wall = model.find_wall(wall_id)
    if wall is None:
        raise UnresolvedWall(f"no wall surface with id {wall_id!r}")

    frame = wall_frame_from_polygon(wall.geometry)
    geometry = cut_rectangle_hole(wall.geometry, placed.source_instance.rect, frame)
    cut_wall = Surface(id=wall.id, kind=wall.kind, geometry=geometry,
                       attributes=dict(wall.attributes))

    new_id = _fresh_id(model, wall_id, placed.cls)
    surfaces = tuple(cut_wall if s is wall else s for s in building.surfaces)
    openings = building.openings
    installations = building.installations
    if placed.cls is FacadeClass.Underpass:
        row = class_to_citygml(placed.cls)
        installations = installations + (BuildingInstallation(
            id=new_id, function_code=row.function_code, geometry=placed.faces,
            confidence=placed.confidence, timestamp=timestamp,
            attributes={"parent_wall": wall_id}),)
    else:
        kind = OpeningKind.Window if placed.cls is FacadeClass.Window else OpeningKind.Door
        openings = openings + (OpeningObject(
            id=new_id, kind=kind, parent_wall_id=wall_id, geometry=placed.faces,
            confidence=placed.confidence, timestamp=timestamp),)

    new_building = _promote(replace(building, surfaces=surfaces, openings=openings,
                                    installations=installations))
    return _swap_building(model, building, new_building)


def embed_installation(model: BuildingModel, wall_id: str, placed: PlacedObject,
                       timestamp: str) -> BuildingModel:
    """Append a facade installation (no wall cut), tagged with its function."""
    row = class_to_citygml(placed.cls)
    if row.citygml_class != "BuildingInstallation" or placed.cls is FacadeClass.Underpass:
        raise UnmappedClass(f"{placed.cls.value} is not an installation class")
    building, wall = model.find_wall(wall_id)
    if wall is None:
        raise UnresolvedWall(f"no wall surface with id {wall_id!r}")

    new_id = _fresh_id(model, wall_id, placed.cls)
    installation = BuildingInstallation(
        id=new_id, function_code=row.function_code, geometry=placed.faces,
        confidence=placed.confidence, timestamp=timestamp,
        attributes={"parent_wall": wall_id})
    new_building = _promote(replace(
        building, installations=building.installations + (installation,)))
    return _swap_building(model, building, new_building)
