"""Floor-plane cell traversal along 2D segments (Amanatides-Woo).

Coordinates are in grid units: cell (r, c) spans [r, r+1) x [c, c+1).
"""
import math

import numpy as np

from . import USE_NUMBA, njit


@njit
def _mark_rays_loop(r0f, c0f, ends, grid):
    H, W = grid.shape
    inf = np.inf
    for i in range(ends.shape[0]):
        dr = ends[i, 0] - r0f
        dc = ends[i, 1] - c0f
        r = int(math.floor(r0f))
        c = int(math.floor(c0f))
        er = int(math.floor(ends[i, 0]))
        ec = int(math.floor(ends[i, 1]))
        if dr > 0.0:
            sr = 1
            tmr = (r + 1 - r0f) / dr
            tdr = 1.0 / dr
        elif dr < 0.0:
            sr = -1
            tmr = (r - r0f) / dr
            tdr = -1.0 / dr
        else:
            sr = 0
            tmr = inf
            tdr = inf
        if dc > 0.0:
            sc = 1
            tmc = (c + 1 - c0f) / dc
            tdc = 1.0 / dc
        elif dc < 0.0:
            sc = -1
            tmc = (c - c0f) / dc
            tdc = -1.0 / dc
        else:
            sc = 0
            tmc = inf
            tdc = inf
        n = abs(er - r) + abs(ec - c)
        for _ in range(n + 1):
            if r < 0 or r >= H or c < 0 or c >= W:
                break
            grid[r, c] = 1
            if r == er and c == ec:
                break
            if tmr < tmc:
                r += sr
                tmr += tdr
            else:
                c += sc
                tmc += tdc


def mark_rays_numba(origin, ends, grid):
    """Set ``grid`` True on every cell crossed by the segments origin -> ends[i]."""
    ends = np.ascontiguousarray(ends, dtype=np.float64).reshape(-1, 2)
    _mark_rays_loop(float(origin[0]), float(origin[1]), ends, grid)
    return grid


def mark_rays_numpy(origin, ends, grid):
    H, W = grid.shape
    r0f, c0f = float(origin[0]), float(origin[1])
    e = np.asarray(ends, dtype=np.float64).reshape(-1, 2)
    n = e.shape[0]
    dr = e[:, 0] - r0f
    dc = e[:, 1] - c0f
    r = np.full(n, math.floor(r0f), dtype=np.int64)
    c = np.full(n, math.floor(c0f), dtype=np.int64)
    er = np.floor(e[:, 0]).astype(np.int64)
    ec = np.floor(e[:, 1]).astype(np.int64)
    inf = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        sr = np.sign(dr).astype(np.int64)
        sc = np.sign(dc).astype(np.int64)
        tmr = np.where(dr > 0, (r + 1 - r0f) / dr, np.where(dr < 0, (r - r0f) / dr, inf))
        tmc = np.where(dc > 0, (c + 1 - c0f) / dc, np.where(dc < 0, (c - c0f) / dc, inf))
        tdr = np.where(dr != 0, 1.0 / np.abs(dr), inf)
        tdc = np.where(dc != 0, 1.0 / np.abs(dc), inf)
    remaining = np.abs(er - r) + np.abs(ec - c)
    active = np.arange(n)
    while active.size:
        ra, ca = r[active], c[active]
        inb = (ra >= 0) & (ra < H) & (ca >= 0) & (ca < W)
        active = active[inb]
        ra, ca = ra[inb], ca[inb]
        grid[ra, ca] = 1
        cont = (remaining[active] > 0) & ~((ra == er[active]) & (ca == ec[active]))
        active = active[cont]
        if not active.size:
            break
        remaining[active] -= 1
        step_r = tmr[active] < tmc[active]
        a_r, a_c = active[step_r], active[~step_r]
        r[a_r] += sr[a_r]
        tmr[a_r] += tdr[a_r]
        c[a_c] += sc[a_c]
        tmc[a_c] += tdc[a_c]
    return grid


@njit
def _ray_cells_loop(r0f, c0f, r1f, c1f, out):
    inf = np.inf
    dr = r1f - r0f
    dc = c1f - c0f
    r = int(math.floor(r0f))
    c = int(math.floor(c0f))
    er = int(math.floor(r1f))
    ec = int(math.floor(c1f))
    if dr > 0.0:
        sr = 1
        tmr = (r + 1 - r0f) / dr
        tdr = 1.0 / dr
    elif dr < 0.0:
        sr = -1
        tmr = (r - r0f) / dr
        tdr = -1.0 / dr
    else:
        sr = 0
        tmr = inf
        tdr = inf
    if dc > 0.0:
        sc = 1
        tmc = (c + 1 - c0f) / dc
        tdc = 1.0 / dc
    elif dc < 0.0:
        sc = -1
        tmc = (c - c0f) / dc
        tdc = -1.0 / dc
    else:
        sc = 0
        tmc = inf
        tdc = inf
    n = abs(er - r) + abs(ec - c)
    k = 0
    for _ in range(n + 1):
        out[k, 0] = r
        out[k, 1] = c
        k += 1
        if r == er and c == ec:
            break
        if tmr < tmc:
            r += sr
            tmr += tdr
        else:
            c += sc
            tmc += tdc
    return k


def ray_cells(start, end) -> np.ndarray:
    """Ordered (row, col) cells crossed by the segment start -> end, in grid units."""
    n = abs(math.floor(end[0]) - math.floor(start[0])) + abs(math.floor(end[1]) - math.floor(start[1])) + 1
    out = np.empty((n, 2), dtype=np.int64)
    k = _ray_cells_loop(float(start[0]), float(start[1]), float(end[0]), float(end[1]), out)
    return out[:k]


mark_rays = mark_rays_numba if USE_NUMBA else mark_rays_numpy
