"""2.5D depth raycasting: floor-plane DDA with an analytic height test per column.

Grid convention: cell (r, c) covers world x in [r*res, (r+1)*res) and y in
[c*res, (c+1)*res). ``cell_ids`` holds 0 for free floor and a positive id per
column; ``heights[id]`` is that column's height. Depth is measured along the
optical axis: the hit point is ``origin + t * direction`` with the direction
normalized to unit forward component.
"""
import math

import numpy as np

from . import USE_NUMBA, njit

HIT_NONE = -1
HIT_FLOOR = -2
HIT_CEILING = -3


@njit
def _cast_rays_loop(cell_ids, heights, res, ox, oy, oz, ceiling, max_range, dirs, depth, hit):
    H, W = cell_ids.shape
    inf = np.inf
    for i in range(dirs.shape[0]):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        t_plane = inf
        plane = HIT_NONE
        if dz < 0.0:
            t_plane = -oz / dz
            plane = HIT_FLOOR
        elif dz > 0.0:
            t_plane = (ceiling - oz) / dz
            plane = HIT_CEILING

        r = int(math.floor(ox / res))
        c = int(math.floor(oy / res))
        if dx > 0.0:
            sr = 1
            tmr = ((r + 1) * res - ox) / dx
            tdr = res / dx
        elif dx < 0.0:
            sr = -1
            tmr = (r * res - ox) / dx
            tdr = -res / dx
        else:
            sr = 0
            tmr = inf
            tdr = inf
        if dy > 0.0:
            sc = 1
            tmc = ((c + 1) * res - oy) / dy
            tdc = res / dy
        elif dy < 0.0:
            sc = -1
            tmc = (c * res - oy) / dy
            tdc = -res / dy
        else:
            sc = 0
            tmc = inf
            tdc = inf

        t_enter = 0.0
        t_hit = inf
        code = HIT_NONE
        while True:
            if t_enter > max_range:
                break
            if r < 0 or r >= H or c < 0 or c >= W:
                t_hit = t_plane
                code = plane
                break
            t_exit = tmr if tmr < tmc else tmc
            cid = cell_ids[r, c]
            if cid > 0:
                h = heights[cid]
                z = oz + dz * t_enter
                if z <= h:
                    t_hit = t_enter
                    code = cid
                    break
                if dz < 0.0:
                    t_top = (h - oz) / dz
                    if t_top <= t_exit:
                        t_hit = t_top
                        code = cid
                        break
            if t_plane <= t_exit:
                t_hit = t_plane
                code = plane
                break
            if tmr < tmc:
                r += sr
                t_enter = tmr
                tmr += tdr
            else:
                c += sc
                t_enter = tmc
                tmc += tdc
        if t_hit <= max_range:
            depth[i] = t_hit
            hit[i] = code
        else:
            depth[i] = inf
            hit[i] = HIT_NONE


def cast_rays_numba(cell_ids, heights, res, origin, ceiling, max_range, dirs):
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    depth = np.empty(dirs.shape[0], dtype=np.float64)
    hit = np.empty(dirs.shape[0], dtype=np.int32)
    _cast_rays_loop(np.ascontiguousarray(cell_ids, dtype=np.int32), np.asarray(heights, dtype=np.float64),
                  float(res), float(origin[0]), float(origin[1]), float(origin[2]),
                  float(ceiling), float(max_range), dirs, depth, hit)
    return depth, hit


def cast_rays_numpy(cell_ids, heights, res, origin, ceiling, max_range, dirs):
    """Vectorized lockstep DDA over all rays; same semantics as the compiled loop."""
    cell_ids = np.asarray(cell_ids, dtype=np.int32)
    heights = np.asarray(heights, dtype=np.float64)
    H, W = cell_ids.shape
    ox, oy, oz = (float(v) for v in origin)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = d.shape[0]
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    inf = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = np.where(dz < 0, -oz / dz, np.where(dz > 0, (ceiling - oz) / dz, inf))
        plane = np.where(dz < 0, HIT_FLOOR, np.where(dz > 0, HIT_CEILING, HIT_NONE)).astype(np.int32)
        r = np.full(n, math.floor(ox / res), dtype=np.int64)
        c = np.full(n, math.floor(oy / res), dtype=np.int64)
        sr = np.sign(dx).astype(np.int64)
        sc = np.sign(dy).astype(np.int64)
        tmr = np.where(dx > 0, ((r + 1) * res - ox) / dx, np.where(dx < 0, (r * res - ox) / dx, inf))
        tmc = np.where(dy > 0, ((c + 1) * res - oy) / dy, np.where(dy < 0, (c * res - oy) / dy, inf))
        tdr = np.where(dx != 0, res / np.abs(dx), inf)
        tdc = np.where(dy != 0, res / np.abs(dy), inf)
    t_enter = np.zeros(n)
    t_hit = np.full(n, inf)
    code = np.full(n, HIT_NONE, dtype=np.int32)
    active = np.arange(n)
    while active.size:
        te = t_enter[active]
        keep = te <= max_range
        active = active[keep]
        if not active.size:
            break
        ra, ca = r[active], c[active]
        oob = (ra < 0) | (ra >= H) | (ca < 0) | (ca >= W)
        done = np.zeros(active.size, dtype=bool)
        if oob.any():
            idx = active[oob]
            t_hit[idx] = t_plane[idx]
            code[idx] = plane[idx]
            done |= oob
        inb = ~oob
        cid = np.zeros(active.size, dtype=np.int32)
        cid[inb] = cell_ids[ra[inb], ca[inb]]
        te = t_enter[active]
        t_exit = np.minimum(tmr[active], tmc[active])
        h = heights[cid]
        col = inb & (cid > 0)
        z = oz + dz[active] * te
        face = col & (z <= h)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_top = (h - oz) / dz[active]
        top = col & ~face & (dz[active] < 0) & (t_top <= t_exit)
        for m, tv in ((face, te), (top, t_top)):
            m = m & ~done
            if m.any():
                idx = active[m]
                t_hit[idx] = tv[m]
                code[idx] = cid[m]
                done |= m
        pl = inb & ~done & (t_plane[active] <= t_exit)
        if pl.any():
            idx = active[pl]
            t_hit[idx] = t_plane[idx]
            code[idx] = plane[idx]
            done |= pl
        active = active[~done]
        if not active.size:
            break
        step_r = tmr[active] < tmc[active]
        a_r, a_c = active[step_r], active[~step_r]
        r[a_r] += sr[a_r]
        t_enter[a_r] = tmr[a_r]
        tmr[a_r] += tdr[a_r]
        c[a_c] += sc[a_c]
        t_enter[a_c] = tmc[a_c]
        tmc[a_c] += tdc[a_c]
    far = ~(t_hit <= max_range)
    t_hit[far] = inf
    code[far] = HIT_NONE
    return t_hit, code


cast_rays = cast_rays_numba if USE_NUMBA else cast_rays_numpy
