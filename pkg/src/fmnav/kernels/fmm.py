"""First-order Fast Marching and 8-connected Dijkstra on boolean grids.

Both solvers settle cells in increasing value order from a min-heap keyed by
(value, flat index), so ties resolve identically on every run.
"""
import heapq
import math

import numpy as np

from . import njit

SQRT2 = math.sqrt(2.0)


def local_update(T, settled, traversable, r: int, c: int, h: float) -> float:
    """Recompute one cell's value from its settled neighbors (both stencils)."""
    H, W = T.shape
    state = np.where(np.asarray(settled).ravel(), 2, 0).astype(np.int8)
    return _local_update.py_func(np.asarray(T, dtype=np.float64).ravel(), state,
                                 np.asarray(traversable, dtype=bool), int(r), int(c), float(h))


def upwind_update(a: float, b: float, h: float) -> float:
    """Solve the discrete eikonal update from the x-axis minimum `a` and y-axis minimum `b`."""
    return _quad.py_func(float(a), float(b), float(h))


@njit
def _quad(a, b, h):
    if a > b:
        a, b = b, a
    if b == np.inf or b - a >= h:
        return a + h
    return 0.5 * (a + b + math.sqrt(2.0 * h * h - (a - b) * (a - b)))


@njit
def _local_update(T, state, trav, r, c, h):
    # min of the axis stencil (spacing h) and the diagonal stencil (spacing sqrt(2) h),
    # each using settled neighbors only; diagonals may not cut blocked corners
    H, W = trav.shape
    n = r * W + c
    a = np.inf
    if r > 0 and state[n - W] == 2:
        a = T[n - W]
    if r < H - 1 and state[n + W] == 2 and T[n + W] < a:
        a = T[n + W]
    b = np.inf
    if c > 0 and state[n - 1] == 2:
        b = T[n - 1]
    if c < W - 1 and state[n + 1] == 2 and T[n + 1] < b:
        b = T[n + 1]
    v = _quad(a, b, h)
    d1 = np.inf
    d2 = np.inf
    for dr in (-1, 1):
        for dc in (-1, 1):
            rr = r + dr
            cc = c + dc
            if rr < 0 or rr >= H or cc < 0 or cc >= W:
                continue
            m = rr * W + cc
            if state[m] != 2 or not trav[rr, c] or not trav[r, cc]:
                continue
            if dr == dc:
                if T[m] < d1:
                    d1 = T[m]
            elif T[m] < d2:
                d2 = T[m]
    vd = _quad(d1, d2, SQRT2 * h)
    return v if v < vd else vd


@njit
def _fmm_loop(trav, seeds, h, stop_idx, slack):
    H, W = trav.shape
    T = np.full(H * W, np.inf)
    state = np.zeros(H * W, dtype=np.int8)  # 0 far, 1 trial, 2 settled
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for k in range(seeds.shape[0]):
        idx = seeds[k, 0] * W + seeds[k, 1]
        T[idx] = 0.0
        state[idx] = 1
    for n in range(H * W):
        if state[n] == 1:
            heapq.heappush(heap, (T[n], np.int64(n)))
    stop_val = np.inf
    while len(heap) > 0:
        t, idx = heapq.heappop(heap)
        if state[idx] == 2 or t > T[idx]:
            continue
        if t > stop_val + slack:
            break
        state[idx] = 2
        if idx == stop_idx:
            stop_val = t
        r = idx // W
        c = idx - r * W
        for k in range(4):
            if k == 0:
                nr, nc = r - 1, c
            elif k == 1:
                nr, nc = r + 1, c
            elif k == 2:
                nr, nc = r, c - 1
            else:
                nr, nc = r, c + 1
            if nr < 0 or nr >= H or nc < 0 or nc >= W or not trav[nr, nc]:
                continue
            n = nr * W + nc
            if state[n] == 2:
                continue
            v = _local_update(T, state, trav, nr, nc, h)
            if v < T[n]:
                T[n] = v
                state[n] = 1
                heapq.heappush(heap, (v, np.int64(n)))
    for i in range(H * W):
        if state[i] != 2:
            T[i] = np.inf
    return T.reshape(H, W)


def fmm_solve(traversable, seeds, h: float, stop_cell=None, slack: float = 0.0) -> np.ndarray:
    """Arrival times of a unit-speed front started at `seeds` over `traversable` cells.

    With `stop_cell`,
    marching halts once values exceed the stop cell's value plus `slack`;
    unsettled cells are reported as +inf.
    """
    trav = np.ascontiguousarray(traversable, dtype=np.bool_)
    seeds = np.ascontiguousarray(np.asarray(seeds, dtype=np.int64).reshape(-1, 2))
    stop_idx = -1 if stop_cell is None else int(stop_cell[0]) * trav.shape[1] + int(stop_cell[1])
    return _fmm_loop(trav, seeds, float(h), stop_idx, float(slack))


@njit
def _dijkstra_loop(trav, seeds, h):
    H, W = trav.shape
    D = np.full(H * W, np.inf)
    done = np.zeros(H * W, dtype=np.bool_)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for k in range(seeds.shape[0]):
        idx = seeds[k, 0] * W + seeds[k, 1]
        D[idx] = 0.0
        heapq.heappush(heap, (0.0, np.int64(idx)))
    while len(heap) > 0:
        d, idx = heapq.heappop(heap)
        if done[idx] or d > D[idx]:
            continue
        done[idx] = True
        r = idx // W
        c = idx - r * W
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if nr < 0 or nr >= H or nc < 0 or nc >= W or not trav[nr, nc]:
                    continue
                # no squeezing between two blocked cells
                if dr != 0 and dc != 0 and (not trav[nr, c] or not trav[r, nc]):
                    continue
                n = nr * W + nc
                w = h if dr == 0 or dc == 0 else SQRT2 * h
                if d + w < D[n]:
                    D[n] = d + w
                    heapq.heappush(heap, (d + w, np.int64(n)))
    return D.reshape(H, W)


def dijkstra8(traversable, seeds, h: float) -> np.ndarray:
    """8-connected grid distances with edge weights h and sqrt(2)*h; diagonal moves may not cut corners."""
    trav = np.ascontiguousarray(traversable, dtype=np.bool_)
    seeds = np.ascontiguousarray(np.asarray(seeds, dtype=np.int64).reshape(-1, 2))
    return _dijkstra_loop(trav, seeds, float(h))
