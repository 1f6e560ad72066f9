"""Geodesic distance fields over the score map and greedy action selection on them."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import FORWARD_M, TURN_RAD, Action, GridIndex, Pose, normalize_angle, quantize_angle
from .kernels import dijkstra8, fmm_solve
from .mapping import OCCUPIED_THRESHOLD, VSSM


class PlanningError(RuntimeError):
    """No traversable goal cell near the requested goal."""


class ReplanNeeded(RuntimeError):
    """The agent's cell has no finite value in the current field."""


def disc_footprint(radius_cells: float) -> np.ndarray:
    """Cells whose square comes within `radius_cells` of the centre cell's centre."""
    k = int(math.ceil(radius_cells + 0.5))
    di, dj = np.mgrid[-k:k + 1, -k:k + 1]
    gx = np.maximum(np.abs(di) - 0.5, 0.0)
    gy = np.maximum(np.abs(dj) - 0.5, 0.0)
    return np.hypot(gx, gy) < radius_cells


def inflate(blocked: np.ndarray, radius_cells: float) -> np.ndarray:
    if radius_cells <= 0:
        return blocked.copy()
    return ndimage.binary_dilation(blocked, structure=disc_footprint(radius_cells))


@dataclass(eq=False)
class DistanceField:
    values: np.ndarray  # (h, w) metres over the crop; +inf where blocked or unreached
    traversable: np.ndarray  # (h, w) bool over the crop
    goal_cells: np.ndarray  # (n, 2) absolute map cells seeded at 0
    offset: tuple[int, int]  # map cell of crop (0, 0)
    resolution: float
    map_origin: tuple[float, float]

    def value(self, r: int, c: int) -> float:
        lr, lc = r - self.offset[0], c - self.offset[1]
        h, w = self.values.shape
        if 0 <= lr < h and 0 <= lc < w:
            return float(self.values[lr, lc])
        return math.inf

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((x - self.map_origin[0]) / self.resolution)),
                int(math.floor((y - self.map_origin[1]) / self.resolution)))

    def full(self, shape) -> np.ndarray:
        out = np.full(shape, np.inf)
        h, w = self.values.shape
        r0, c0 = self.offset
        out[r0:r0 + h, c0:c0 + w] = self.values
        return out


def compute_field(vssm: VSSM, goal, agent_radius: float = 0.18, *, agent_cell=None,
                  inflation_margin: float | None = None, snap_radius: float = 0.5,
                  crop_margin: float = 3.0, stop_slack: float | None = 2.0,
                  solver: str = "fmm") -> DistanceField:
    """Distance field to `goal` (a GridIndex or an (n, 2) array of cells).

    Obstacles (occupied >= 0.5) are inflated by the agent radius plus a margin;
    unexplored cells count as free. Goal cells inside inflated obstacles are
    replaced by traversable cells within `snap_radius`. The solve is limited to
    the known area plus `crop_margin` metres and, with `agent_cell` given, stops
    `stop_slack` metres past the agent's value.
    """
    res = vssm.resolution
    H, W = vssm.shape
    goals = np.atleast_2d(np.asarray(goal.as_tuple() if isinstance(goal, GridIndex) else goal,
                                     dtype=np.int64))
    if not len(goals):
        raise PlanningError("empty goal set")
    if ((goals < 0) | (goals >= np.array([H, W]))).any():
        raise PlanningError("goal outside the map")
    m = int(math.ceil(crop_margin / res))
    box = vssm.explored_bbox() or (H, 0, W, 0)
    pts = [goals]
    if agent_cell is not None:
        pts.append(np.array([agent_cell.as_tuple() if isinstance(agent_cell, GridIndex) else agent_cell]))
    pts = np.concatenate(pts)
    r0 = max(0, min(box[0], int(pts[:, 0].min())) - m)
    r1 = min(H, max(box[1], int(pts[:, 0].max()) + 1) + m)
    c0 = max(0, min(box[2], int(pts[:, 1].min())) - m)
    c1 = min(W, max(box[3], int(pts[:, 1].max()) + 1) + m)

    occ = vssm.occupied[r0:r1, c0:c1] >= OCCUPIED_THRESHOLD
    margin = res if inflation_margin is None else inflation_margin
    rad = (agent_radius + margin) / res
    trav = ~inflate(occ, rad)
    local_agent = None
    if agent_cell is not None:
        ar, ac = agent_cell.as_tuple() if isinstance(agent_cell, GridIndex) else agent_cell
        local_agent = (ar - r0, ac - c0)
        # let the agent leave an inflated zone it is already standing in
        k = int(math.ceil(rad))
        a0, a1 = max(0, local_agent[0] - k), min(r1 - r0, local_agent[0] + k + 1)
        b0, b1 = max(0, local_agent[1] - k), min(c1 - c0, local_agent[1] + k + 1)
        rr, cc = np.mgrid[a0:a1, b0:b1]
        near = np.hypot(rr - local_agent[0], cc - local_agent[1]) <= rad
        patch = trav[a0:a1, b0:b1]
        patch[near & ~occ[a0:a1, b0:b1]] = True

    lg = goals - np.array([r0, c0])
    ok = trav[lg[:, 0], lg[:, 1]]
    seeds = lg[ok]
    if not len(seeds):
        # snap to traversable cells within snap_radius of any goal cell
        target = np.zeros_like(trav)
        target[lg[:, 0], lg[:, 1]] = True
        dist = ndimage.distance_transform_edt(~target) * res
        near = trav & (dist <= snap_radius + 1e-9)
        seeds = np.argwhere(near)
        if not len(seeds):
            raise PlanningError("goal is inside an obstacle with no traversable cell nearby")
    if solver == "dijkstra":
        T = dijkstra8(trav, seeds, res)
    else:
        stop = local_agent if (local_agent is not None and stop_slack is not None
                               and 0 <= local_agent[0] < trav.shape[0]
                               and 0 <= local_agent[1] < trav.shape[1]) else None
        T = fmm_solve(trav, seeds, res, stop_cell=stop, slack=stop_slack or 0.0)
    return DistanceField(T, trav, seeds + np.array([r0, c0]), (r0, c0), res, vssm.geom.origin)


def _segment_value(field: DistanceField, x0: float, y0: float, x1: float, y1: float) -> float:
    """Field value at (x1, y1), or inf if any sample along the segment is untraversable."""
    n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / (field.resolution / 2))) + 1)
    for s in np.linspace(0.0, 1.0, n)[1:]:
        v = field.value(*field.cell_of(x0 + s * (x1 - x0), y0 + s * (y1 - y0)))
        if not math.isfinite(v):
            return math.inf
    return v


def best_heading(field: DistanceField, pose: Pose, forward_m: float = FORWARD_M,
                 turn_rad: float = TURN_RAD):
    """Signed number of turns to the heading whose forward step lands lowest, or None.

    Only headings whose whole step stays on finite cells and lowers the value
    count. Ties go to fewer turns, then to the left.
    """
    r, c = field.cell_of(pose.x, pose.y)
    here = field.value(r, c)
    if not math.isfinite(here):
        raise ReplanNeeded("agent cell has no finite distance")
    n = max(1, int(round(2 * math.pi / turn_rad)))
    best = None
    for k in sorted(range(-(n // 2) + (n % 2 == 0), n // 2 + 1), key=lambda k: (abs(k), -k)):
        # same lattice arithmetic as the simulator, so a heading reached by turning scores identically
        yaw = normalize_angle(pose.yaw + k * quantize_angle(turn_rad))
        v = _segment_value(field, pose.x, pose.y,
                           pose.x + forward_m * math.cos(yaw), pose.y + forward_m * math.sin(yaw))
        if v < here - 1e-9 and (best is None or v < best[1]):
            best = (k, v)
    return None if best is None else best[0]


def next_action(field: DistanceField, pose: Pose, forward_m: float = FORWARD_M,
                turn_rad: float = TURN_RAD) -> Action:
    """Step forward if the current heading lands lowest, else turn toward the best heading."""
    k = best_heading(field, pose, forward_m, turn_rad)
    if k is None:
        return Action.TURN_LEFT
    if k == 0:
        return Action.MOVE_FORWARD
    return Action.TURN_LEFT if k > 0 else Action.TURN_RIGHT


def handle_collision(vssm: VSSM, pose: Pose, last_action: Action = Action.MOVE_FORWARD,
                     collided: bool = True, forward_m: float = FORWARD_M):
    """Mark the cell one step ahead as occupied after a blocked move. Returns the cell or None."""
    if not collided or Action(last_action) is not Action.MOVE_FORWARD:
        return None
    x = pose.x + forward_m * math.cos(pose.yaw)
    y = pose.y + forward_m * math.sin(pose.yaw)
    r, c = vssm.geom.world_to_cell(x, y)
    r, c = int(r), int(c)
    if not vssm.geom.in_bounds(r, c):
        return None
    vssm.mark_occupied(np.array([[r, c]]))
    return GridIndex(r, c)
