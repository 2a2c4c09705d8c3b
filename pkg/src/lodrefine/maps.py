"""Wall-plane probability maps.

Three rasters share one pixel layout per wall (``resolution`` meters per
pixel over the wall-frame rectangle ``[0, u_extent] x [0, v_extent]``):

* conflict map — per-pixel max of voxel conflict probabilities,
* point-label map — per-pixel class vote shares of nearby scan points,
* texture map — externally classified raster resampled onto the wall.

Pixel ``(row, col)`` covers ``u in [col*res, (col+1)*res]`` and
``v in [row*res, (row+1)*res]``; row 0 sits at the frame origin.  For
vertical walls the frame's v axis points world-down, so row order is
natural image order (top of the wall first).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .cloud import FACADE_CLASSES, FacadeClass, map_label
from .errors import EmptyWall, FormatError, SizeMismatch
from .geom import WallFrame, rings_in_frame, to_frame
from .visibility import WallConflicts, _points_in_rings

DEFAULT_RESOLUTION = 0.05
DEFAULT_MAX_OFFSET = 0.3

CONFLICT_CHANNEL = "conflict"


def _channel_key(channel) -> str:
    return channel.value if isinstance(channel, FacadeClass) else str(channel)


@dataclass
class ProbabilityMap:
    """Immutable per-wall raster with named channels, values in [0, 1]."""

    frame: WallFrame
    resolution: float
    channels: tuple
    values: np.ndarray  # (n_channels, height, width) float64

    def __post_init__(self):
        self.channels = tuple(_channel_key(c) for c in self.channels)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] != len(self.channels):
            raise ValueError("values must be (n_channels, height, width)")
        self.values.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def has_channel(self, channel) -> bool:
        return _channel_key(channel) in self.channels

    def channel(self, channel) -> np.ndarray:
        key = _channel_key(channel)
        try:
            return self.values[self.channels.index(key)]
        except ValueError:
            raise KeyError(f"map has no channel {key!r}") from None


def map_shape(frame: WallFrame, resolution: float) -> tuple:
    """(height, width) of the raster covering the wall rectangle."""
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    w = max(1, math.ceil(frame.u_extent / resolution))
    h = max(1, math.ceil(frame.v_extent / resolution))
    return h, w


def _pixel_indices(u, v, resolution, shape):
    h, w = shape
    col = np.clip(np.floor(np.asarray(u) / resolution).astype(np.int64), 0, w - 1)
    row = np.clip(np.floor(np.asarray(v) / resolution).astype(np.int64), 0, h - 1)
    return row, col


def _inside_mask(frame: WallFrame, rings2d, resolution: float, shape) -> np.ndarray:
    """Pixels whose center lies inside the wall polygon (holes excluded)."""
    h, w = shape
    uc = (np.arange(w) + 0.5) * resolution
    vc = (np.arange(h) + 0.5) * resolution
    uu = np.repeat(uc[None, :], h, axis=0).ravel()
    vv = np.repeat(vc[:, None], w, axis=1).ravel()
    return _points_in_rings(uu, vv, rings2d).reshape(h, w)


def rasterize_conflicts(conflicts: WallConflicts, wall_geometry,
                        resolution: float = DEFAULT_RESOLUTION) -> ProbabilityMap:
    """Project classified wall voxels to a conflict probability raster.

    Covered pixels take the max conflict probability of their voxels;
    uncovered in-polygon pixels are uninformative (0.5); pixels whose
    center falls outside the wall polygon are 0.
    """
    if not len(conflicts.indices):
        raise EmptyWall(f"wall {conflicts.wall_id!r} has no classified voxels")
    frame = conflicts.frame
    shape = map_shape(frame, resolution)
    rings = rings_in_frame(wall_geometry, frame)
    inside = _inside_mask(frame, rings, resolution, shape)

    pooled = np.zeros(shape)
    covered = np.zeros(shape, dtype=bool)
    row, col = _pixel_indices(conflicts.uv[:, 0], conflicts.uv[:, 1], resolution, shape)
    np.maximum.at(pooled, (row, col), conflicts.p_conflicted)
    covered[row, col] = True

    vals = np.where(covered, pooled, 0.5)
    vals[~inside] = 0.0
    return ProbabilityMap(frame=frame, resolution=resolution,
                          channels=(CONFLICT_CHANNEL,), values=vals[None, :, :])


def uniform_conflict_map(frame: WallFrame, wall_geometry,
                         resolution: float = DEFAULT_RESOLUTION) -> ProbabilityMap:
    """All-uninformative conflict map for walls without any classified voxel."""
    shape = map_shape(frame, resolution)
    rings = rings_in_frame(wall_geometry, frame)
    inside = _inside_mask(frame, rings, resolution, shape)
    vals = np.where(inside, 0.5, 0.0)
    return ProbabilityMap(frame=frame, resolution=resolution,
                          channels=(CONFLICT_CHANNEL,), values=vals[None, :, :])


def rasterize_point_labels(cloud, frame: WallFrame,
                           resolution: float = DEFAULT_RESOLUTION,
                           max_offset: float = DEFAULT_MAX_OFFSET) -> ProbabilityMap:
    """Per-pixel class vote shares of points within ``max_offset`` of the wall.

    Pixels that receive no vote stay all-zero (sub-probability raster).
    """
    if max_offset <= 0.0:
        raise ValueError("max_offset must be positive")
    shape = map_shape(frame, resolution)
    counts = np.zeros((len(FACADE_CLASSES),) + shape)

    u, v, w = to_frame(cloud.xyz, frame)
    near = (np.abs(w) <= max_offset) & \
           (u >= 0.0) & (u <= frame.u_extent) & (v >= 0.0) & (v <= frame.v_extent)
    if np.any(near):
        row, col = _pixel_indices(u[near], v[near], resolution, shape)
        chan = cloud.label_indices()[near]
        np.add.at(counts, (chan, row, col), 1.0)

    total = counts.sum(axis=0)
    with np.errstate(invalid="ignore"):
        share = np.where(total > 0, counts / total, 0.0)
    return ProbabilityMap(frame=frame, resolution=resolution,
                          channels=FACADE_CLASSES, values=share)


# ---------------------------------------------------------------------------
# texture rasters

@dataclass
class TextureRaster:
    """Pre-rectified external classification raster (channel-planar)."""

    channels: tuple
    values: np.ndarray  # (n_channels, height, width)

    def __post_init__(self):
        self.channels = tuple(_channel_key(c) for c in self.channels)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] != len(self.channels):
            raise ValueError("values must be (n_channels, height, width)")


def ingest_texture_map(raster: TextureRaster, frame: WallFrame,
                       resolution: float = DEFAULT_RESOLUTION) -> ProbabilityMap:
    """Nearest-neighbor resample of a wall-rectified raster to map layout."""
    hs, ws = raster.values.shape[1:]
    shape = map_shape(frame, resolution)
    wall_aspect = frame.u_extent / frame.v_extent
    raster_aspect = ws / hs
    if abs(raster_aspect / wall_aspect - 1.0) > 0.10:
        raise SizeMismatch(
            f"texture raster aspect {raster_aspect:.4g} deviates from wall "
            f"aspect {wall_aspect:.4g} by more than 10%")
    ht, wt = shape
    src_r = np.minimum((np.arange(ht) + 0.5) * hs // ht, hs - 1).astype(np.int64)
    src_c = np.minimum((np.arange(wt) + 0.5) * ws // wt, ws - 1).astype(np.int64)
    vals = raster.values[:, src_r[:, None], src_c[None, :]]
    return ProbabilityMap(frame=frame, resolution=resolution,
                          channels=raster.channels, values=vals)


def texture_from_labels(label_grid: np.ndarray, mapping: dict | None = None) -> TextureRaster:
    """One-hot texture raster from an integer hard-label image."""
    grid = np.asarray(label_grid)
    values = np.zeros((len(FACADE_CLASSES),) + grid.shape)
    for code in np.unique(grid):
        cls = map_label(int(code), mapping)
        values[FACADE_CLASSES.index(cls)][grid == code] = 1.0
    return TextureRaster(channels=FACADE_CLASSES, values=values)


def read_texture_pgm(data: bytes, mapping: dict | None = None) -> TextureRaster:
    """Hard-label texture from a PGM image of integer class codes."""
    grid, _ = _parse_pgm(data)
    return texture_from_labels(grid, mapping)


def read_texture_raw(raw: bytes, sidecar: bytes | str) -> TextureRaster:
    """Multi-channel texture: float32-LE planes + JSON sidecar.

    Sidecar: ``{"width": W, "height": H, "channels": [class names...]}``;
    raw data is channel-planar, each plane row-major.
    """
    if isinstance(sidecar, bytes):
        sidecar = sidecar.decode("utf-8")
    try:
        meta = json.loads(sidecar)
        w = int(meta["width"])
        h = int(meta["height"])
        names = list(meta["channels"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad texture sidecar: {exc}") from None
    expect = 4 * w * h * len(names)
    if len(raw) != expect:
        raise SizeMismatch(
            f"texture raw data is {len(raw)} bytes, expected {expect} "
            f"({len(names)} x {h} x {w} float32)")
    vals = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(len(names), h, w)
    from .cloud import parse_class_name

    return TextureRaster(channels=tuple(parse_class_name(n) for n in names), values=vals)


# ---------------------------------------------------------------------------
# PGM export / import

def export_map_pgm(pmap: ProbabilityMap, channel=CONFLICT_CHANNEL) -> bytes:
    """16-bit binary PGM of one channel; sample = round-half-up(p * 65535)."""
    vals = pmap.channel(channel)
    samples = np.floor(vals * 65535.0 + 0.5).astype(np.uint16)
    header = f"P5\n{pmap.width} {pmap.height}\n65535\n".encode("ascii")
    return header + samples.astype(">u2").tobytes()


def _parse_pgm(data: bytes):
    """Binary PGM (P5) -> (int array (H, W), maxval). Comments allowed."""
    if not data.startswith(b"P5"):
        raise FormatError("not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    while len(fields) < 3:
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\d+)").match(data, pos)
        if not m:
            raise FormatError("malformed PGM header")
        fields.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = fields
    if not (0 < maxval < 65536):
        raise FormatError(f"PGM maxval {maxval} out of range")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    body = data[pos:pos + need]
    if len(body) != need:
        raise FormatError("PGM pixel data truncated")
    grid = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return grid.astype(np.int64), maxval


def read_map_pgm(data: bytes) -> np.ndarray:
    """Inverse of export_map_pgm: probabilities in [0, 1]."""
    grid, maxval = _parse_pgm(data)
    return grid.astype(np.float64) / float(maxval)
