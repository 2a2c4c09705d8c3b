# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled ray-casting kernels.

Twin of `_raycast_py`: exact 3D digital differential traversal over a
uniform voxel grid.  Outputs are bit-identical to the pure-Python
backend — same IEEE double operations per ray, same x-before-y-before-z
tie break, same out-of-bounds and guard handling.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, floor

cnp.import_array()

BACKEND = "c"


cdef inline long long _clampi(long long v, long long hi) nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def traverse_segment(o, e, amin, double h, long long nx, long long ny, long long nz):
    """Ordered voxel indices visited by one segment, endpoint voxel last."""
    cdef double[::1] ov = np.ascontiguousarray(o, dtype=np.float64)
    cdef double[::1] ev = np.ascontiguousarray(e, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(amin, dtype=np.float64)
    cdef long long dims[3]
    dims[0] = nx
    dims[1] = ny
    dims[2] = nz

    cdef long long idx[3]
    cdef long long end[3]
    cdef long long step[3]
    cdef double tmax[3]
    cdef double tdelta[3]
    cdef double d[3]
    cdef int k, ax
    for k in range(3):
        idx[k] = _clampi(<long long> floor((ov[k] - mv[k]) / h), dims[k] - 1)
        end[k] = _clampi(<long long> floor((ev[k] - mv[k]) / h), dims[k] - 1)
        d[k] = ev[k] - ov[k]
        if d[k] > 0.0:
            step[k] = 1
            tmax[k] = (mv[k] + (idx[k] + 1) * h - ov[k]) / d[k]
            tdelta[k] = h / d[k]
        elif d[k] < 0.0:
            step[k] = -1
            tmax[k] = (mv[k] + idx[k] * h - ov[k]) / d[k]
            tdelta[k] = -h / d[k]
        else:
            step[k] = 0
            tmax[k] = INFINITY
            tdelta[k] = INFINITY

    out = [(idx[0], idx[1], idx[2])]
    cdef long long guard = nx + ny + nz + 3
    while idx[0] != end[0] or idx[1] != end[1] or idx[2] != end[2]:
        if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
            ax = 0
        elif tmax[1] <= tmax[2]:
            ax = 1
        else:
            ax = 2
        idx[ax] += step[ax]
        tmax[ax] += tdelta[ax]
        if idx[ax] < 0 or idx[ax] >= dims[ax]:
            break
        out.append((idx[0], idx[1], idx[2]))
        guard -= 1
        if guard <= 0:
            break
    return np.array(out, dtype=np.int64)


def cast_segments(o, e, amin, double h, long long nx, long long ny, long long nz,
                  terminal_hit, trav, hits, min_hit_d2):
    """Accumulate traversal/hit counts and per-voxel nearest-hit distance^2."""
    cdef double[:, ::1] ov = np.ascontiguousarray(o, dtype=np.float64)
    cdef double[:, ::1] ev = np.ascontiguousarray(e, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(amin, dtype=np.float64)
    cdef cnp.uint8_t[::1] th = np.ascontiguousarray(terminal_hit, dtype=np.uint8)
    cdef long long[::1] tv = trav
    cdef long long[::1] hv = hits
    cdef double[::1] dv = min_hit_d2

    cdef long long dims[3]
    dims[0] = nx
    dims[1] = ny
    dims[2] = nz
    cdef Py_ssize_t n = ov.shape[0]
    cdef Py_ssize_t i
    cdef long long idx[3]
    cdef long long end[3]
    cdef long long step[3]
    cdef double tmax[3]
    cdef double tdelta[3]
    cdef double d[3]
    cdef double cx, cy, cz, d2
    cdef long long flat, guard
    cdef int k, ax
    cdef bint reached

    with nogil:
        for i in range(n):
            for k in range(3):
                idx[k] = _clampi(<long long> floor((ov[i, k] - mv[k]) / h), dims[k] - 1)
                end[k] = _clampi(<long long> floor((ev[i, k] - mv[k]) / h), dims[k] - 1)
                d[k] = ev[i, k] - ov[i, k]
                if d[k] > 0.0:
                    step[k] = 1
                    tmax[k] = (mv[k] + (idx[k] + 1) * h - ov[i, k]) / d[k]
                    tdelta[k] = h / d[k]
                elif d[k] < 0.0:
                    step[k] = -1
                    tmax[k] = (mv[k] + idx[k] * h - ov[i, k]) / d[k]
                    tdelta[k] = -h / d[k]
                else:
                    step[k] = 0
                    tmax[k] = INFINITY
                    tdelta[k] = INFINITY

            reached = idx[0] == end[0] and idx[1] == end[1] and idx[2] == end[2]
            if not reached:
                flat = (idx[0] * ny + idx[1]) * nz + idx[2]
                tv[flat] += 1

            guard = nx + ny + nz + 3
            while not reached:
                if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
                    ax = 0
                elif tmax[1] <= tmax[2]:
                    ax = 1
                else:
                    ax = 2
                idx[ax] += step[ax]
                tmax[ax] += tdelta[ax]
                if idx[ax] < 0 or idx[ax] >= dims[ax]:
                    break
                if idx[0] == end[0] and idx[1] == end[1] and idx[2] == end[2]:
                    reached = True
                    break
                flat = (idx[0] * ny + idx[1]) * nz + idx[2]
                tv[flat] += 1
                guard -= 1
                if guard <= 0:
                    break

            if reached:
                flat = (end[0] * ny + end[1]) * nz + end[2]
                if th[i]:
                    hv[flat] += 1
                    cx = ev[i, 0] - (mv[0] + (end[0] + 0.5) * h)
                    cy = ev[i, 1] - (mv[1] + (end[1] + 0.5) * h)
                    cz = ev[i, 2] - (mv[2] + (end[2] + 0.5) * h)
                    d2 = cx * cx + cy * cy + cz * cz
                    if d2 < dv[flat]:
                        dv[flat] = d2
                else:
                    tv[flat] += 1
