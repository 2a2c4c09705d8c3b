"""Voxel visibility analysis.

Builds a uniform voxel grid over the scene, casts every laser ray from
its sensor origin to its measured endpoint, and derives per-voxel
occupancy states:

* ``OCCUPIED`` — at least one ray terminated inside the voxel,
* ``EMPTY``    — rays passed through but none terminated,
* ``UNKNOWN``  — never visited.

Wall surfaces are then compared against the grid.  A voxel whose center
lies on a wall's plane (within half the voxel diagonal) and projects
into the wall polygon is *confirmed* when occupied and *conflicted*
when empty.  Both carry a joint probability

    p_confirmed  = P(A) * P(B)
    p_conflicted = 1 - p_confirmed

where P(A) scores the voxel-center-to-plane distance against the model
uncertainty (``sigma_model``) and P(B) scores the distance to measured
evidence against the sensor uncertainty (``sigma_point``): the nearest
ray hit inside the voxel for occupied voxels, or the nearest occupied
voxel center (searched within ``3 * sigma_point``) for empty ones.

The ray-casting kernel is compiled (Cython) when available and falls
back to a pure-numpy implementation with bit-identical output.  Set
``LODREFINE_RAYCAST=python`` or ``=c`` to force a backend.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cloud import LabeledPointCloud, UncertaintyParams
from .errors import EmptyInput
from .geom import WallFrame, rings_in_frame, wall_frame_from_polygon

_FORCED = os.environ.get("LODREFINE_RAYCAST", "").strip().lower()
if _FORCED in ("python", "py"):
    from . import _raycast_py as _kernel
elif _FORCED == "c":
    from . import _raycast_c as _kernel  # noqa: F401  (raises if unavailable)
else:
    try:
        from . import _raycast_c as _kernel
    except ImportError:
        from . import _raycast_py as _kernel


def kernel_backend() -> str:
    """Name of the active ray-casting backend: ``"c"`` or ``"python"``."""
    return _kernel.BACKEND


# Voxel occupancy / conflict states.
EMPTY = np.uint8(0)
OCCUPIED = np.uint8(1)
UNKNOWN = np.uint8(2)
CONFIRMED = np.uint8(3)
CONFLICTED = np.uint8(4)

STATE_NAMES = {
    int(EMPTY): "empty",
    int(OCCUPIED): "occupied",
    int(UNKNOWN): "unknown",
    int(CONFIRMED): "confirmed",
    int(CONFLICTED): "conflicted",
}

DEFAULT_VOXEL_SIZE = 0.1
DEFAULT_PADDING = 0.5


@dataclass(frozen=True)
class VoxelGrid:
    """Axis-aligned uniform grid: ``dims`` voxels of edge ``voxel_size``."""

    aabb_min: np.ndarray
    voxel_size: float
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "aabb_min", np.asarray(self.aabb_min, dtype=np.float64))
        if self.voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValueError("dims must be three positive integers")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def aabb_max(self) -> np.ndarray:
        return self.aabb_min + np.asarray(self.dims, dtype=np.float64) * self.voxel_size

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def voxel_index(self, points: np.ndarray) -> np.ndarray:
        """Voxel index of each point, clamped to the grid."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        idx = np.floor((pts - self.aabb_min) / self.voxel_size).astype(np.int64)
        return np.clip(idx, 0, np.asarray(self.dims, dtype=np.int64) - 1)

    def voxel_centers(self, indices: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(np.asarray(indices, dtype=np.int64))
        return self.aabb_min + (idx + 0.5) * self.voxel_size

    def all_centers(self) -> np.ndarray:
        """Centers of every voxel, shape ``(nx, ny, nz, 3)``."""
        nx, ny, nz = self.dims
        ax = [self.aabb_min[k] + (np.arange(d) + 0.5) * self.voxel_size
              for k, d in enumerate(self.dims)]
        out = np.empty((nx, ny, nz, 3))
        out[..., 0] = ax[0][:, None, None]
        out[..., 1] = ax[1][None, :, None]
        out[..., 2] = ax[2][None, None, :]
        return out


@dataclass
class OccupancyGrid:
    """Per-voxel ray statistics accumulated over a point cloud."""

    grid: VoxelGrid
    traversals: np.ndarray  # int64 (nx, ny, nz): pass-through count
    hits: np.ndarray        # int64 (nx, ny, nz): ray endpoint count
    min_hit_d2: np.ndarray  # float64 (nx, ny, nz): nearest hit to center, squared

    @property
    def n_hits(self) -> int:
        return int(self.hits.sum())


def build_grid(cloud: LabeledPointCloud, model=None,
               voxel_size: float = DEFAULT_VOXEL_SIZE,
               padding: float = DEFAULT_PADDING) -> VoxelGrid:
    """Grid covering the cloud, its sensor origins, and the model, plus padding.

    Extents snap outward to whole voxels; every axis gets at least one.
    """
    if voxel_size <= 0.0:
        raise ValueError("voxel_size must be positive")
    if padding < 0.0:
        raise ValueError("padding must be non-negative")
    chunks = []
    if cloud is not None and len(cloud.xyz):
        chunks.append(cloud.xyz)
        chunks.append(cloud.origins)
    if model is not None:
        for building in model.buildings:
            for surface in building.surfaces:
                chunks.append(surface.geometry.exterior)
    if not chunks:
        raise EmptyInput("no points, origins, or model geometry to build a grid over")
    pts = np.vstack(chunks)
    lo = pts.min(axis=0) - padding
    hi = pts.max(axis=0) + padding
    dims = np.maximum(np.ceil((hi - lo) / voxel_size).astype(np.int64), 1)
    return VoxelGrid(aabb_min=lo, voxel_size=voxel_size, dims=tuple(int(d) for d in dims))


def clip_segments(o: np.ndarray, e: np.ndarray, aabb_min, aabb_max):
    """Clip segments to an AABB (Liang-Barsky).

    Returns ``(oc, ec, keep, terminal)``: clipped endpoints, a mask of
    segments that intersect the box, and a mask marking segments whose
    measured endpoint itself lies inside (their end voxel is a hit; a
    clipped-away endpoint only ever contributes pass-throughs).
    """
    o = np.atleast_2d(np.asarray(o, dtype=np.float64))
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    lo = np.asarray(aabb_min, dtype=np.float64)
    hi = np.asarray(aabb_max, dtype=np.float64)
    d = e - o
    n = len(o)
    t0 = np.zeros(n)
    t1 = np.ones(n)
    keep = np.ones(n, dtype=bool)
    for k in range(3):
        dk = d[:, k]
        ok = o[:, k]
        par = dk == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[k] - ok) / dk
            tb = (hi[k] - ok) / dk
        tlo = np.minimum(ta, tb)
        thi = np.maximum(ta, tb)
        keep &= ~par | ((ok >= lo[k]) & (ok <= hi[k]))
        t0 = np.where(par, t0, np.maximum(t0, tlo))
        t1 = np.where(par, t1, np.minimum(t1, thi))
    keep &= t0 <= t1
    terminal = keep & (t1 >= 1.0)
    oc = o + t0[:, None] * d
    ec = o + t1[:, None] * d
    return oc, ec, keep, terminal


def _cast_batch(grid: VoxelGrid, origins: np.ndarray, endpoints: np.ndarray):
    nx, ny, nz = grid.dims
    n = grid.n_voxels
    trav = np.zeros(n, dtype=np.int64)
    hits = np.zeros(n, dtype=np.int64)
    d2 = np.full(n, np.inf)
    oc, ec, keep, terminal = clip_segments(origins, endpoints, grid.aabb_min, grid.aabb_max)
    if np.any(keep):
        _kernel.cast_segments(
            np.ascontiguousarray(oc[keep]), np.ascontiguousarray(ec[keep]),
            grid.aabb_min, grid.voxel_size, nx, ny, nz,
            np.ascontiguousarray(terminal[keep].astype(np.uint8)),
            trav, hits, d2)
    return trav, hits, d2


def cast_all(grid: VoxelGrid, cloud: LabeledPointCloud, jobs: int = 1) -> OccupancyGrid:
    """Cast every ray of the cloud through the grid.

    ``jobs`` splits the rays into contiguous batches processed in worker
    threads; results are merged by commutative sums/minima, so output is
    identical for any job count.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    origins = cloud.origins[cloud.origin_index]
    endpoints = cloud.xyz
    n = len(endpoints)
    jobs = max(1, min(jobs, n)) if n else 1
    batches = np.array_split(np.arange(n), jobs)

    if jobs == 1:
        parts = [_cast_batch(grid, origins, endpoints)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(
                lambda b: _cast_batch(grid, origins[b], endpoints[b]), batches))

    nx, ny, nz = grid.dims
    trav = np.zeros(grid.n_voxels, dtype=np.int64)
    hits = np.zeros(grid.n_voxels, dtype=np.int64)
    d2 = np.full(grid.n_voxels, np.inf)
    for t, h, m in parts:
        trav += t
        hits += h
        np.minimum(d2, m, out=d2)
    return OccupancyGrid(
        grid=grid,
        traversals=trav.reshape(nx, ny, nz),
        hits=hits.reshape(nx, ny, nz),
        min_hit_d2=d2.reshape(nx, ny, nz),
    )


def traverse_ray(grid: VoxelGrid, origin, endpoint) -> np.ndarray:
    """Ordered voxel indices visited by one segment (clipped to the grid).

    Empty ``(0, 3)`` result when the segment misses the grid entirely.
    """
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    e = np.asarray(endpoint, dtype=np.float64).reshape(1, 3)
    oc, ec, keep, _ = clip_segments(o, e, grid.aabb_min, grid.aabb_max)
    if not keep[0]:
        return np.empty((0, 3), dtype=np.int64)
    nx, ny, nz = grid.dims
    return _kernel.traverse_segment(oc[0], ec[0], grid.aabb_min, grid.voxel_size, nx, ny, nz)


def voxel_state(occ: OccupancyGrid) -> np.ndarray:
    """Per-voxel occupancy state; a single hit outweighs any pass-throughs."""
    states = np.full(occ.grid.dims, UNKNOWN, dtype=np.uint8)
    states[occ.traversals > 0] = EMPTY
    states[occ.hits > 0] = OCCUPIED
    return states


def positional_probability(distance, sigma: float, mu: float = 0.0):
    """Gaussian membership ``exp(-(|d - mu|)^2 / (2 sigma^2))`` in (0, 1]."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    d = np.abs(np.asarray(distance, dtype=np.float64) - mu)
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


def _points_in_rings(u: np.ndarray, v: np.ndarray, rings) -> np.ndarray:
    """Vectorized even-odd test of many points against polygon rings."""
    inside = np.zeros(len(u), dtype=bool)
    for ring in rings:
        r = np.asarray(ring, dtype=np.float64)
        x0, y0 = r[:, 0], r[:, 1]
        x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
        for a0, b0, a1, b1 in zip(x0, y0, x1, y1):
            if b0 == b1:
                continue
            cross = (v < b0) != (v < b1)
            t = (v - b0) / (b1 - b0)
            xi = a0 + t * (a1 - a0)
            inside ^= cross & (u < xi)
    return inside


@dataclass
class WallConflicts:
    """Classified on-plane voxels of one wall, in flat-index order."""

    wall_id: str
    frame: WallFrame
    indices: np.ndarray       # int64 (K, 3)
    uv: np.ndarray            # float64 (K, 2): voxel centers in the wall frame
    states: np.ndarray        # uint8 (K,): CONFIRMED or CONFLICTED
    p_confirmed: np.ndarray   # float64 (K,)
    p_conflicted: np.ndarray  # float64 (K,)

    @property
    def n_confirmed(self) -> int:
        return int(np.count_nonzero(self.states == CONFIRMED))

    @property
    def n_conflicted(self) -> int:
        return int(np.count_nonzero(self.states == CONFLICTED))


def classify_wall_conflicts(occ: OccupancyGrid, states: np.ndarray, wall_id: str,
                            frame: WallFrame, rings2d,
                            params: UncertaintyParams = UncertaintyParams(),
                            _centers: np.ndarray = None) -> WallConflicts:
    """Classify the voxels of one wall plane as confirmed or conflicted."""
    grid = occ.grid
    h = grid.voxel_size
    centers = grid.all_centers() if _centers is None else _centers
    rel = centers - frame.origin
    dist = rel @ frame.normal
    near = (np.abs(dist) <= (np.sqrt(3.0) / 2.0) * h) & (states != UNKNOWN)

    cand = np.argwhere(near)
    uv = np.empty((0, 2))
    if len(cand):
        rel_c = rel[near]
        uv = np.column_stack([rel_c @ frame.u_axis, rel_c @ frame.v_axis])
        keep = _points_in_rings(uv[:, 0], uv[:, 1], rings2d)
        cand = cand[keep]
        uv = uv[keep]
    if not len(cand):
        return WallConflicts(wall_id, frame, np.empty((0, 3), dtype=np.int64),
                             np.empty((0, 2)), np.empty(0, dtype=np.uint8),
                             np.empty(0), np.empty(0))

    ix, iy, iz = cand[:, 0], cand[:, 1], cand[:, 2]
    d_plane = np.abs(dist[ix, iy, iz])
    p_a = positional_probability(d_plane, params.sigma_model, params.mu_model)

    occupied = states[ix, iy, iz] == OCCUPIED
    p_b = np.zeros(len(cand))
    if np.any(occupied):
        d_hit = np.sqrt(occ.min_hit_d2[ix[occupied], iy[occupied], iz[occupied]])
        p_b[occupied] = positional_probability(d_hit, params.sigma_point, params.mu_point)
    empty = ~occupied
    if np.any(empty):
        p_b[empty] = _nearest_occupied_prob(
            grid, states, grid.voxel_centers(cand[empty]), params)

    p_conf = p_a * p_b
    out_states = np.where(occupied, CONFIRMED, CONFLICTED).astype(np.uint8)
    return WallConflicts(
        wall_id=wall_id,
        frame=frame,
        indices=cand.astype(np.int64),
        uv=uv,
        states=out_states,
        p_confirmed=p_conf,
        p_conflicted=1.0 - p_conf,
    )


def _nearest_occupied_prob(grid: VoxelGrid, states: np.ndarray,
                           query_points: np.ndarray, params: UncertaintyParams):
    """P(B) of empty voxels: score of the nearest occupied center in reach."""
    from scipy.spatial import cKDTree

    occ_idx = np.argwhere(states == OCCUPIED)
    if not len(occ_idx):
        return np.zeros(len(query_points))
    tree = cKDTree(grid.voxel_centers(occ_idx))
    radius = 3.0 * params.sigma_point
    d, _ = tree.query(query_points, distance_upper_bound=radius)
    # Out-of-reach queries come back inf; the Gaussian maps them to 0.
    return positional_probability(d, params.sigma_point, params.mu_point)


def classify_conflicts(occ: OccupancyGrid, states: np.ndarray, walls,
                       params: UncertaintyParams = UncertaintyParams()) -> dict:
    """Per-wall conflict classification for a sequence of wall surfaces."""
    centers = occ.grid.all_centers()
    out = {}
    for wall in walls:
        frame = wall_frame_from_polygon(wall.geometry)
        rings = rings_in_frame(wall.geometry, frame)
        out[wall.id] = classify_wall_conflicts(
            occ, states, wall.id, frame, rings, params, _centers=centers)
    return out


def conflict_state_grid(states: np.ndarray, conflicts: dict) -> np.ndarray:
    """Base states with classified wall voxels overwritten (later walls win)."""
    merged = states.copy()
    for wc in conflicts.values():
        if len(wc.indices):
            merged[wc.indices[:, 0], wc.indices[:, 1], wc.indices[:, 2]] = wc.states
    return merged


def p_confirmed_grid(dims, conflicts: dict) -> np.ndarray:
    """Dense p_confirmed raster over the grid (0 where unclassified)."""
    dense = np.zeros(dims)
    for wc in conflicts.values():
        if len(wc.indices):
            dense[wc.indices[:, 0], wc.indices[:, 1], wc.indices[:, 2]] = wc.p_confirmed
    return dense


def dump_voxels(states: np.ndarray, p_confirmed: np.ndarray) -> str:
    """Text dump of all visited voxels: ``ix iy iz state p_confirmed`` lines."""
    lines = ["# ix iy iz state p_confirmed"]
    visited = np.argwhere(states != UNKNOWN)
    for ix, iy, iz in visited:
        lines.append("%d %d %d %s %.9g" % (
            ix, iy, iz, STATE_NAMES[int(states[ix, iy, iz])],
            p_confirmed[ix, iy, iz]))
    return "\n".join(lines) + "\n"
