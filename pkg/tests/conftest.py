"""Shared synthetic fixtures: box buildings and a facade scanner.

Every scene follows the same convention: the facade under test lies in
the x = 0 plane with the building body at x > 0, so its exterior ring
winds to an outward (-x) normal.  The scanner sits in front of the
facade at negative x and fires rays at targets on the wall rectangle;
targets inside a hole either pass through the opening (endpoint behind
the wall plane) or return early on the "glass" plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lodrefine.cloud import DEFAULT_LABEL_MAP, LabeledPointCloud, map_label

settings.register_profile("suite", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")
from lodrefine.geom import PolygonWithHoles, Rect2
from lodrefine.model import Building, BuildingModel, Surface, SurfaceKind


def ring(*pts) -> np.ndarray:
    return np.asarray(pts, dtype=np.float64)


def _f9(x: float) -> float:
    """Quantize to the 9-significant-digit file precision."""
    return float(f"{float(x):.9g}")


# ---------------------------------------------------------------------------
# building models

def box_model(width=10.0, depth=5.0, height=6.0, bid="b1", lod=2,
              offset=(0.0, 0.0, 0.0), azimuth=0.0,
              crs="EPSG:25832", attributes=None) -> BuildingModel:
    """Closed watertight box; ``<bid>-wall-front`` faces -x (after rotation).

    ``azimuth`` rotates the box about the world z axis, ``offset``
    translates it.  All rings reference one shared corner table so that
    coincident edges carry bitwise-identical coordinates.
    """
    W, D, H = float(width), float(depth), float(height)
    corners = np.array([
        [0, 0, 0], [0, W, 0], [D, W, 0], [D, 0, 0],
        [0, 0, H], [0, W, H], [D, W, H], [D, 0, H],
    ], dtype=np.float64)
    if azimuth:
        c, s = np.cos(azimuth), np.sin(azimuth)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        corners = corners @ rot.T
    corners = corners + np.asarray(offset, dtype=np.float64)

    def surf(name, kind, idxs):
        return Surface(id=f"{bid}-{name}", kind=kind,
                       geometry=PolygonWithHoles(exterior=corners[list(idxs)]))

    surfaces = (
        surf("wall-front", SurfaceKind.WallSurface, (0, 4, 5, 1)),
        surf("wall-back", SurfaceKind.WallSurface, (3, 2, 6, 7)),
        surf("wall-left", SurfaceKind.WallSurface, (0, 3, 7, 4)),
        surf("wall-right", SurfaceKind.WallSurface, (1, 5, 6, 2)),
        surf("roof", SurfaceKind.RoofSurface, (4, 7, 6, 5)),
        surf("ground", SurfaceKind.GroundSurface, (0, 1, 2, 3)),
    )
    building = Building(id=bid, lod=lod, surfaces=surfaces,
                        attributes=dict(attributes or {}))
    return BuildingModel(buildings=(building,), crs_label=crs)


def single_wall_model(width=4.0, height=3.0, bid="b1", wall_id=None) -> BuildingModel:
    """One free-standing wall at x = 0 (not watertight; detection only)."""
    wall_id = wall_id or f"{bid}-wall"
    wall = Surface(id=wall_id, kind=SurfaceKind.WallSurface,
                   geometry=PolygonWithHoles(exterior=ring(
                       (0, 0, 0), (0, 0, height), (0, width, height), (0, width, 0))))
    return BuildingModel(buildings=(Building(id=bid, lod=2, surfaces=(wall,)),))


# ---------------------------------------------------------------------------
# synthetic scanner

#: Default label codes under DEFAULT_LABEL_MAP.
WALL_CODE = 3
WINDOW_CODE = 4
DOOR_CODE = 5
UNDERPASS_CODE = 6
BEHIND_CODE = 15  # unmapped -> Other


@dataclass
class HoleSpec:
    """A physical opening in the facade the scanner can see through."""

    y0: float
    y1: float
    z0: float
    z1: float
    pass_through: float = 0.5            # fraction of rays continuing behind
    return_codes: tuple = ((WINDOW_CODE, 1.0),)  # label mix of glass returns

    def contains(self, y, z):
        return (y >= self.y0) & (y <= self.y1) & (z >= self.z0) & (z <= self.z1)

    def truth_rect(self, wall_height: float) -> Rect2:
        """Ground-truth rectangle in the x=0 facade frame (u=y, v=height-z)."""
        return Rect2(u_min=self.y0, v_min=wall_height - self.z1,
                     u_max=self.y1, v_max=wall_height - self.z0)


def facade_scan(width=10.0, height=6.0, holes=(), n_rays=40000, origin=None,
                label_accuracy=0.9, glass_x=0.12, behind_x=1.5, seed=7,
                grid_targets=False) -> LabeledPointCloud:
    """Scan the x=0 facade rectangle from a single sensor position.

    Targets are uniform random over the facade (or a regular grid when
    ``grid_targets``).  Points on the wall are labeled ``WALL_CODE``
    with probability ``label_accuracy`` (otherwise a uniformly random
    code 1..14); glass returns draw from their hole's label mix with the
    same accuracy treatment; pass-through points get ``BEHIND_CODE``.
    """
    rng = np.random.default_rng(seed)
    if origin is None:
        origin = np.array([-5.0, width / 2.0, height / 2.0])
    origin = np.asarray(origin, dtype=np.float64)

    if grid_targets:
        step = np.sqrt(width * height / n_rays)
        ys = np.arange(step / 2.0, width, step)
        zs = np.arange(step / 2.0, height, step)
        ty, tz = (a.ravel() for a in np.meshgrid(ys, zs, indexing="ij"))
    else:
        ty = rng.uniform(0.0, width, n_rays)
        tz = rng.uniform(0.0, height, n_rays)
    n = len(ty)

    targets = np.column_stack([np.zeros(n), ty, tz])
    d = targets - origin
    # Parameter along the ray reaching a given x plane (origin is at x < 0).
    s_glass = (glass_x - origin[0]) / (0.0 - origin[0])
    s_behind = (behind_x - origin[0]) / (0.0 - origin[0])

    xyz = targets.copy()
    codes = np.where(rng.random(n) < label_accuracy, WALL_CODE,
                     rng.integers(1, 15, n))
    for hole in holes:
        inside = hole.contains(ty, tz)
        if not inside.any():
            continue
        through = inside & (rng.random(n) < hole.pass_through)
        ret = inside & ~through
        xyz[through] = origin + s_behind * d[through]
        codes[through] = BEHIND_CODE
        if ret.any():
            xyz[ret] = origin + s_glass * d[ret]
            mix_codes = np.array([c for c, _ in hole.return_codes])
            mix_w = np.array([w for _, w in hole.return_codes], dtype=np.float64)
            picks = rng.choice(mix_codes, size=int(ret.sum()), p=mix_w / mix_w.sum())
            noisy = rng.random(int(ret.sum())) >= label_accuracy
            picks[noisy] = rng.integers(1, 15, int(noisy.sum()))
            codes[ret] = picks

    labels = np.array([map_label(int(c), DEFAULT_LABEL_MAP) for c in codes],
                      dtype=object)
    return LabeledPointCloud(xyz=xyz, labels=labels,
                             origin_index=np.zeros(n, dtype=np.int64),
                             origins=origin[None, :])


def permute_cloud(cloud: LabeledPointCloud, perm: np.ndarray) -> LabeledPointCloud:
    return LabeledPointCloud(xyz=cloud.xyz[perm], labels=cloud.labels[perm],
                             origin_index=cloud.origin_index[perm],
                             origins=cloud.origins)


def rect_iou(a: Rect2, b: Rect2) -> float:
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# ---------------------------------------------------------------------------
# canned scenes

#: Ground-truth windows of the two-window detection scene (world y/z rects).
TWO_WINDOWS = (HoleSpec(2.0, 3.0, 2.0, 3.5), HoleSpec(6.0, 7.0, 2.0, 3.5))


@pytest.fixture(scope="session")
def two_window_scene():
    """10x6 facade with two 1.0 x 1.5 windows and a 40k-ray scan."""
    model = box_model(width=10.0, depth=5.0, height=6.0, bid="b1")
    cloud = facade_scan(width=10.0, height=6.0, holes=TWO_WINDOWS,
                        n_rays=40000, seed=7)
    return model, cloud


@pytest.fixture(scope="session")
def scene_files(two_window_scene, tmp_path_factory):
    """The two-window scene written to disk for CLI runs."""
    from lodrefine.cloud import write_point_cloud
    from lodrefine.model import serialize_model

    model, cloud = two_window_scene
    root = tmp_path_factory.mktemp("scene")
    model_path = root / "scene.cm.json"
    cloud_path = root / "scene.lpc"
    model_path.write_bytes(serialize_model(model))
    cloud_path.write_bytes(write_point_cloud(cloud))
    return model_path, cloud_path
