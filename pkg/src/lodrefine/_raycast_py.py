"""Pure-Python ray-casting kernels (numpy lockstep march).

Fallback twin of the compiled module `_raycast_c`. Both implement exact
3D digital differential traversal over a uniform voxel grid and MUST
produce bit-identical outputs: the same voxel visit sequence (same IEEE
double operations, same x-before-y-before-z tie break) and the same
count/min-distance accumulation.

Segments are expected pre-clipped to the grid AABB.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _start_indices(p: np.ndarray, amin: np.ndarray, h: float, dims) -> np.ndarray:
    idx = np.floor((p - amin) / h).astype(np.int64)
    return np.clip(idx, 0, np.asarray(dims, dtype=np.int64) - 1)


def traverse_segment(o, e, amin, h, nx, ny, nz):
    """Ordered voxel indices visited by one segment, endpoint voxel last."""
    dims = (nx, ny, nz)
    o = np.asarray(o, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    amin = np.asarray(amin, dtype=np.float64)
    idx = _start_indices(o, amin, h, dims)
    end = _start_indices(e, amin, h, dims)
    d = e - o

    tmax = np.empty(3)
    tdelta = np.empty(3)
    step = np.zeros(3, dtype=np.int64)
    for k in range(3):
        if d[k] > 0.0:
            step[k] = 1
            tmax[k] = (amin[k] + (idx[k] + 1) * h - o[k]) / d[k]
            tdelta[k] = h / d[k]
        elif d[k] < 0.0:
            step[k] = -1
            tmax[k] = (amin[k] + idx[k] * h - o[k]) / d[k]
            tdelta[k] = -h / d[k]
        else:
            tmax[k] = np.inf
            tdelta[k] = np.inf

    visited = [idx.copy()]
    guard = nx + ny + nz + 3
    while not np.array_equal(idx, end):
        if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
            ax = 0
        elif tmax[1] <= tmax[2]:
            ax = 1
        else:
            ax = 2
        idx[ax] += step[ax]
        tmax[ax] += tdelta[ax]
        if not (0 <= idx[ax] < dims[ax]):
            break
        visited.append(idx.copy())
        guard -= 1
        if guard <= 0:
            break
    return np.array(visited, dtype=np.int64)


def cast_segments(o, e, amin, h, nx, ny, nz, terminal_hit, trav, hits, min_hit_d2):
    """Accumulate traversal/hit counts and per-voxel nearest-hit distance^2.

    All rays march in lockstep; per-ray arithmetic matches the scalar
    routine above operation for operation.
    """
    o = np.asarray(o, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    amin = np.asarray(amin, dtype=np.float64)
    terminal_hit = np.asarray(terminal_hit, dtype=bool)
    n = len(o)
    if n == 0:
        return
    dims = np.array([nx, ny, nz], dtype=np.int64)

    idx = np.clip(np.floor((o - amin) / h).astype(np.int64), 0, dims - 1)
    end = np.clip(np.floor((e - amin) / h).astype(np.int64), 0, dims - 1)
    d = e - o

    step = np.zeros_like(idx)
    step[d > 0.0] = 1
    step[d < 0.0] = -1
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = amin + (idx + (step > 0)) * h
        tmax = np.where(step != 0, (bound - o) / d, np.inf)
        tdelta = np.where(step != 0, h / np.abs(d), np.inf)

    active = np.any(idx != end, axis=1)
    flat = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
    # Start voxel: pass-through unless the ray begins and ends in it.
    np.add.at(trav, flat[active], 1)

    guard = nx + ny + nz + 3
    while np.any(active):
        sel = np.where(active)[0]
        ax = np.argmin(tmax[sel], axis=1)
        idx[sel, ax] += step[sel, ax]
        tmax[sel, ax] += tdelta[sel, ax]

        stepped = idx[sel, ax]
        out = (stepped < 0) | (stepped >= dims[ax])
        active[sel[out]] = False
        sel = sel[~out]

        done = np.all(idx[sel] == end[sel], axis=1)
        moving = sel[~done]
        flat = (idx[moving, 0] * ny + idx[moving, 1]) * nz + idx[moving, 2]
        np.add.at(trav, flat, 1)
        active[sel[done]] = False

        guard -= 1
        if guard <= 0:
            break

    # Terminal voxel of every ray that stayed in bounds.
    reached = np.all(idx == end, axis=1)
    tflat = (end[:, 0] * ny + end[:, 1]) * nz + end[:, 2]
    hit_rows = reached & terminal_hit
    np.add.at(hits, tflat[hit_rows], 1)
    np.add.at(trav, tflat[reached & ~terminal_hit], 1)

    center = amin + (end[hit_rows] + 0.5) * h
    d2 = np.sum((e[hit_rows] - center) ** 2, axis=1)
    np.minimum.at(min_hit_d2, tflat[hit_rows], d2)
