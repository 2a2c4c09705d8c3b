"""Probability map rasterization, texture ingestion, PGM round trips."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lodrefine.cloud import FACADE_CLASSES, FacadeClass, LabeledPointCloud, UncertaintyParams
from lodrefine.errors import EmptyWall, FormatError, SizeMismatch
from lodrefine.geom import PolygonWithHoles, WallFrame, wall_frame_from_polygon
from lodrefine.maps import (
    CONFLICT_CHANNEL,
    ProbabilityMap,
    TextureRaster,
    export_map_pgm,
    ingest_texture_map,
    map_shape,
    rasterize_conflicts,
    rasterize_point_labels,
    read_map_pgm,
    read_texture_pgm,
    read_texture_raw,
    texture_from_labels,
    uniform_conflict_map,
)
from lodrefine.visibility import (
    CONFLICTED,
    WallConflicts,
    build_grid,
    cast_all,
    classify_wall_conflicts,
    voxel_state,
)
from conftest import HoleSpec, facade_scan, single_wall_model


def flat_wall(width=4.0, height=3.0):
    """Wall at x=0 facing -x (u=+y, v=-z, origin top-left) plus its frame."""
    poly = PolygonWithHoles(exterior=np.array(
        [[0, 0, 0], [0, 0, height], [0, width, height], [0, width, 0]], float))
    return poly, wall_frame_from_polygon(poly)


def test_map_shape_rounds_up_and_clamps():
    _, frame = flat_wall(4.0, 3.0)
    assert map_shape(frame, 0.5) == (6, 8)
    assert map_shape(frame, 0.45) == (7, 9)
    tiny = WallFrame(origin=frame.origin, u_axis=frame.u_axis,
                     v_axis=frame.v_axis, normal=frame.normal,
                     u_extent=0.001, v_extent=0.001)
    assert map_shape(tiny, 0.5) == (1, 1)
    with pytest.raises(ValueError):
        map_shape(frame, 0.0)


def test_probability_map_accessors():
    _, frame = flat_wall()
    values = np.zeros((2, 6, 8))
    pm = ProbabilityMap(frame=frame, resolution=0.5,
                        channels=("a", FacadeClass.Window), values=values)
    assert pm.height == 6 and pm.width == 8
    assert pm.channels == ("a", "window")
    assert pm.has_channel("a") and pm.has_channel(FacadeClass.Window)
    assert not pm.has_channel("z")
    assert pm.channel(FacadeClass.Window).shape == (6, 8)
    with pytest.raises(KeyError):
        pm.channel("z")
    with pytest.raises(ValueError):
        pm.channel("a")[0, 0] = 1.0  # read-only
    with pytest.raises(ValueError):
        ProbabilityMap(frame=frame, resolution=0.5, channels=("a",),
                       values=np.zeros((6, 8)))


def test_uniform_conflict_map_inside_half_outside_zero():
    poly, frame = flat_wall(2.0, 1.0)
    pm = uniform_conflict_map(frame, poly, resolution=0.5)
    assert pm.channels == (CONFLICT_CHANNEL,)
    assert np.all(pm.channel(CONFLICT_CHANNEL) == 0.5)


# ---------------------------------------------------------------------------
# rasterizing wall conflicts

def hand_conflicts(frame, uv, p_conflicted, wall_id="w"):
    n = len(uv)
    p_target = np.asarray(p_conflicted, dtype=float)
    return WallConflicts(
        wall_id=wall_id, frame=frame,
        indices=np.zeros((n, 3), dtype=np.int64),
        uv=np.asarray(uv, dtype=float).reshape(n, 2),
        states=np.full(n, CONFLICTED, dtype=np.uint8),
        p_confirmed=1.0 - p_target, p_conflicted=p_target)


def test_rasterize_pools_maximum_per_pixel():
    poly, frame = flat_wall(1.0, 1.0)
    # Two voxels land in the same 0.5 m pixel; the larger value wins.
    wc = hand_conflicts(frame, [[0.2, 0.2], [0.3, 0.3], [0.8, 0.8]],
                        [0.4, 0.9, 0.7])
    pm = rasterize_conflicts(wc, poly, resolution=0.5)
    vals = pm.channel(CONFLICT_CHANNEL)
    assert vals.shape == (2, 2)
    assert vals[0, 0] == 0.9
    assert vals[1, 1] == 0.7
    # In-polygon pixels without voxel evidence stay uninformative.
    assert vals[0, 1] == 0.5 and vals[1, 0] == 0.5


def test_rasterize_zero_outside_polygon_and_in_holes():
    poly, frame = flat_wall(2.0, 2.0)
    hole = np.array([[0, 1.2, 1.2], [0, 1.2, 1.8], [0, 1.8, 1.8], [0, 1.8, 1.2]], float)
    poly = PolygonWithHoles(exterior=poly.exterior, interiors=(hole,))
    wc = hand_conflicts(frame, [[0.25, 0.25]], [0.8])
    pm = rasterize_conflicts(wc, poly, resolution=0.5)
    vals = pm.channel(CONFLICT_CHANNEL)
    assert vals[0, 0] == 0.8
    # Hole occupies u in [1.2, 1.8], v in [0.2, 0.8]: pixel (1, 3) center
    # (1.75, 0.75) falls inside the interior ring -> masked to zero.
    assert vals[1, 3] == 0.0
    assert vals[3, 3] == 0.5  # below the hole, plain wall


def test_rasterize_empty_wall_raises():
    poly, frame = flat_wall()
    wc = hand_conflicts(frame, np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(EmptyWall):
        rasterize_conflicts(wc, poly, resolution=0.5)


def test_hole_separation_on_deterministic_scan():
    """In-hole conflict mass clearly separates from intact wall area.

    Fully deterministic: grid-spaced scan targets, no label noise, wall
    plane aligned with voxel centers (padding 0.55 places x=0 on one).
    """
    model = single_wall_model(width=4.0, height=3.0, wall_id="w")
    hole = HoleSpec(1.5, 2.5, 1.0, 2.5, pass_through=1.0)
    cloud = facade_scan(width=4.0, height=3.0, origin=(-5.0, 2.0, 1.5),
                        holes=(hole,), n_rays=4800, grid_targets=True)
    grid = build_grid(cloud, model, voxel_size=0.1, padding=0.55)
    occ = cast_all(grid, cloud)
    states = voxel_state(occ)
    wall = model.buildings[0].surfaces[0]
    frame = wall_frame_from_polygon(wall.geometry)
    from lodrefine.geom import rings_in_frame
    wc = classify_wall_conflicts(occ, states, wall.id, frame,
                                 rings_in_frame(wall.geometry, frame),
                                 UncertaintyParams())
    pm = rasterize_conflicts(wc, wall.geometry, resolution=0.1)
    vals = pm.channel(CONFLICT_CHANNEL)

    h, w = vals.shape
    uu = (np.arange(w) + 0.5) * 0.1
    vv = (np.arange(h) + 0.5) * 0.1
    u_grid, v_grid = np.meshgrid(uu, vv)
    z_grid = 3.0 - v_grid  # v runs downward from the top of the 3 m wall
    inside = (u_grid > 1.6) & (u_grid < 2.4) & (z_grid > 1.1) & (z_grid < 2.4)
    outside = ~((u_grid > 1.4) & (u_grid < 2.6) & (z_grid > 0.9) & (z_grid < 2.6))
    mean_in = float(vals[inside].mean())
    mean_out = float(vals[outside].mean())
    assert mean_in - mean_out >= 0.3
    assert mean_in > 0.5 > mean_out


# ---------------------------------------------------------------------------
# point-label rasterization

def make_cloud(xyz, labels, origin=(-5.0, 0.0, 0.0)):
    xyz = np.asarray(xyz, dtype=float)
    return LabeledPointCloud(
        xyz=xyz, labels=np.asarray(labels, dtype=object),
        origin_index=np.zeros(len(xyz), dtype=np.int64),
        origins=np.asarray([origin], dtype=float))


def test_rasterize_point_labels_shares():
    _, frame = flat_wall(1.0, 1.0)
    # Three points vote in pixel (0, 0) (u < 0.5, z > 0.5): two windows,
    # one wall. One point votes in (1, 1). One point is too far off-plane.
    cloud = make_cloud(
        [[0.0, 0.2, 0.8], [0.0, 0.3, 0.9], [0.01, 0.1, 0.7],
         [0.0, 0.8, 0.2], [2.0, 0.2, 0.8]],
        [FacadeClass.Window, FacadeClass.Window, FacadeClass.Wall,
         FacadeClass.Door, FacadeClass.Window])
    pm = rasterize_point_labels(cloud, frame, resolution=0.5, max_offset=0.3)
    assert pm.channels == tuple(c.value for c in FACADE_CLASSES)
    win = pm.channel(FacadeClass.Window)
    assert win[0, 0] == pytest.approx(2.0 / 3.0)
    assert pm.channel(FacadeClass.Wall)[0, 0] == pytest.approx(1.0 / 3.0)
    assert pm.channel(FacadeClass.Door)[1, 1] == 1.0
    # Pixels without any in-range vote stay all-zero.
    assert win[0, 1] == 0.0 and pm.channel(FacadeClass.Wall)[0, 1] == 0.0
    # Shares per covered pixel sum to one.
    assert pm.values[:, 0, 0].sum() == pytest.approx(1.0)


def test_rasterize_point_labels_offset_cut():
    _, frame = flat_wall(1.0, 1.0)
    cloud = make_cloud([[0.29, 0.5, 0.5], [0.31, 0.5, 0.5]],
                       [FacadeClass.Window, FacadeClass.Door])
    pm = rasterize_point_labels(cloud, frame, resolution=1.0, max_offset=0.3)
    assert pm.channel(FacadeClass.Window)[0, 0] == 1.0
    assert pm.channel(FacadeClass.Door)[0, 0] == 0.0
    with pytest.raises(ValueError):
        rasterize_point_labels(cloud, frame, max_offset=0.0)


# ---------------------------------------------------------------------------
# textures

def test_texture_from_labels_one_hot():
    # Default label codes: 3 = wall, 4 = window, 5 = door.
    tex = texture_from_labels(np.array([[3, 4], [5, 3]]))
    assert tex.values.shape == (len(FACADE_CLASSES), 2, 2)
    wall = tex.values[FACADE_CLASSES.index(FacadeClass.Wall)]
    np.testing.assert_array_equal(wall, [[1, 0], [0, 1]])
    win = tex.values[FACADE_CLASSES.index(FacadeClass.Window)]
    np.testing.assert_array_equal(win, [[0, 1], [0, 0]])
    assert tex.values.sum(axis=0).min() == 1.0  # one-hot everywhere


def test_ingest_texture_resamples_nearest():
    _, frame = flat_wall(4.0, 2.0)
    # Source raster 8x16 -> target 4x8 at 0.5 m: factor-2 decimation.
    src = np.arange(8 * 16, dtype=np.float64).reshape(8, 16) / (8 * 16)
    tex = TextureRaster(channels=("wall",), values=src[None])
    pm = ingest_texture_map(tex, frame, resolution=0.5)
    got = pm.channel("wall")
    assert got.shape == (4, 8)
    rows = np.minimum((np.arange(4) + 0.5) * 8 // 4, 7).astype(int)
    cols = np.minimum((np.arange(8) + 0.5) * 16 // 8, 15).astype(int)
    np.testing.assert_array_equal(got, src[np.ix_(rows, cols)])


def test_ingest_texture_accepts_close_aspect():
    _, frame = flat_wall(4.0, 2.0)
    tex = TextureRaster(channels=("wall",), values=np.zeros((1, 10, 21)))
    pm = ingest_texture_map(tex, frame, resolution=0.5)  # 5% off, tolerated
    assert pm.channel("wall").shape == (4, 8)


def test_ingest_texture_rejects_aspect_mismatch():
    _, frame = flat_wall(4.0, 2.0)  # aspect 2.0
    tex = TextureRaster(channels=("wall",), values=np.zeros((1, 10, 10)))
    with pytest.raises(SizeMismatch):
        ingest_texture_map(tex, frame, resolution=0.5)


def test_read_texture_raw_and_errors():
    arr = np.random.default_rng(0).random((2, 3, 4)).astype("<f4")
    meta = json.dumps({"width": 4, "height": 3, "channels": ["wall", "window"]})
    tex = read_texture_raw(arr.tobytes(), meta)
    assert tex.channels == ("wall", "window")
    np.testing.assert_allclose(tex.values, arr.astype(np.float64))

    with pytest.raises(SizeMismatch):
        read_texture_raw(arr.tobytes()[:-4], meta)
    with pytest.raises(FormatError):
        read_texture_raw(arr.tobytes(), json.dumps({"width": 4}))
    with pytest.raises(FormatError):
        read_texture_raw(arr.tobytes(), "not json")


def test_read_texture_pgm_hard_labels():
    data = b"P5\n2 2\n255\n" + bytes([3, 4, 5, 3])
    tex = read_texture_pgm(data)
    wall = tex.values[FACADE_CLASSES.index(FacadeClass.Wall)]
    np.testing.assert_array_equal(wall, [[1, 0], [0, 1]])


# ---------------------------------------------------------------------------
# PGM round trips

def one_channel_map(vals):
    poly, frame = flat_wall(float(vals.shape[1]), float(vals.shape[0]))
    return ProbabilityMap(frame=frame, resolution=1.0,
                          channels=(CONFLICT_CHANNEL,), values=vals[None])


def test_pgm_round_trip_accuracy():
    rng = np.random.default_rng(2)
    vals = rng.random((5, 7))
    back = read_map_pgm(export_map_pgm(one_channel_map(vals)))
    assert back.shape == (5, 7)
    assert np.max(np.abs(back - vals)) <= 0.5 / 65535 + 1e-12


@given(st.lists(st.integers(min_value=0, max_value=65535),
                min_size=1, max_size=40))
def test_pgm_exact_on_grid_values(ks):
    # Values that are exact multiples of 1/65535 survive bit-exactly.
    vals = np.asarray(ks, dtype=np.float64).reshape(1, -1) / 65535.0
    back = read_map_pgm(export_map_pgm(one_channel_map(vals)))
    np.testing.assert_array_equal(back, vals)


def test_pgm_header_comments_and_errors():
    body = np.asarray([[0, 65535]], dtype=">u2").tobytes()
    data = b"P5\n# a comment\n2 1\n# another\n65535\n" + body
    np.testing.assert_allclose(read_map_pgm(data), [[0.0, 1.0]])

    with pytest.raises(FormatError):
        read_map_pgm(b"P5\n2 1\n65535\n\x00\x01")  # truncated payload
    with pytest.raises(FormatError):
        read_map_pgm(b"P6\n2 1\n255\n" + bytes(6))  # wrong magic
    with pytest.raises(FormatError):
        read_map_pgm(b"P5\n2 1\n0\n")  # maxval out of range


def test_pgm_eight_bit_payload():
    np.testing.assert_allclose(read_map_pgm(b"P5\n2 1\n255\n" + bytes([0, 255])),
                               [[0.0, 1.0]])
