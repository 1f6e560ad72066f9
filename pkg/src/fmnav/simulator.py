"""2.5D grid-world simulator: depth by raycasting, oracle semantics, collision-checked stepping."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .core import (DEFAULT_CAMERA_HEIGHT, FORWARD_M, TILT_RAD, TURN_RAD, Action, CameraIntrinsics,
                   GridIndex, ObjectLabel, Pose, camera_rays, pose_step)
from .kernels import HIT_NONE, cast_rays, dijkstra8, ray_cells

FORMAT_VERSION = 1
WALL_ID = 1


class SceneError(ValueError):
    pass


class UnreachableGoalError(SceneError):
    pass


class StartBlockedError(SceneError):
    pass


@dataclass(frozen=True)
class SceneObject:
    label: ObjectLabel
    cells: tuple[tuple[int, int], ...]
    height: float

    @property
    def centroid_rc(self) -> tuple[float, float]:
        a = np.asarray(self.cells, dtype=np.float64)
        return float(a[:, 0].mean()), float(a[:, 1].mean())


@dataclass(eq=False)
class SceneSpec:
    resolution: float
    occupancy: np.ndarray  # (H, W) bool, True = wall
    ceiling_height: float
    objects: list[SceneObject]
    start: Pose
    goal_labels: list[ObjectLabel]
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @cached_property
    def cell_ids(self) -> np.ndarray:
        """0 free floor, 1 wall, 2 + k for object k."""
        ids = np.where(self.occupancy, WALL_ID, 0).astype(np.int32)
        for k, obj in enumerate(self.objects):
            a = np.asarray(obj.cells, dtype=np.int64)
            ids[a[:, 0], a[:, 1]] = 2 + k
        return ids

    @cached_property
    def heights(self) -> np.ndarray:
        return np.array([0.0, self.ceiling_height] + [o.height for o in self.objects], dtype=np.float64)

    @cached_property
    def blocked(self) -> np.ndarray:
        return self.cell_ids > 0

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(x / self.resolution)), int(math.floor(y / self.resolution))

    def cell_center(self, r, c):
        return (np.asarray(r) + 0.5) * self.resolution, (np.asarray(c) + 0.5) * self.resolution

    def in_bounds(self, r: int, c: int) -> bool:
        H, W = self.shape
        return 0 <= r < H and 0 <= c < W

    def goal_objects(self, goals=None) -> list[int]:
        goals = self.goal_labels if goals is None else goals
        return [k for k, o in enumerate(self.objects) if any(g.matches(o.label) for g in goals)]

    # -- serialization -------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "resolution": self.resolution,
            "ceiling_height": self.ceiling_height,
            "occupancy": ["".join("#" if v else "." for v in row) for row in self.occupancy],
            "objects": [{"label": o.label.to_dict(), "cells": [list(c) for c in o.cells], "height": o.height}
                        for o in self.objects],
            "start": self.start.to_dict(),
            "goal_labels": [g.to_dict() for g in self.goal_labels],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        if d.get("format_version") != FORMAT_VERSION:
            raise SceneError(f"unsupported scene format_version {d.get('format_version')!r}")
        rows = d["occupancy"]
        if not rows or any(len(r) != len(rows[0]) for r in rows) or any(set(r) - {".", "#"} for r in rows):
            raise SceneError("occupancy must be equal-length rows of '.' and '#'")
        occ = np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)
        objects = [SceneObject(ObjectLabel.from_dict(o["label"]),
                               tuple((int(r), int(c)) for r, c in o["cells"]), float(o["height"]))
                   for o in d["objects"]]
        return cls(float(d["resolution"]), occ, float(d["ceiling_height"]), objects,
                   Pose.from_dict(d["start"]), [ObjectLabel.from_dict(g) for g in d["goal_labels"]],
                   dict(d.get("meta", {})))


def navigable_mask(scene: SceneSpec, radius: float) -> np.ndarray:
    """Cells where a disc of `radius` centred on the cell centre touches no blocked cell."""
    from scipy import ndimage

    blocked = scene.blocked
    if radius <= 0:
        return ~blocked
    k = int(math.ceil(radius / scene.resolution + 0.5))
    di, dj = np.mgrid[-k:k + 1, -k:k + 1]
    # distance from the origin cell centre to each offset cell's square, in cells
    gx = np.maximum(np.abs(di) - 0.5, 0.0)
    gy = np.maximum(np.abs(dj) - 0.5, 0.0)
    footprint = np.hypot(gx, gy) * scene.resolution < radius
    return ~ndimage.binary_dilation(blocked, structure=footprint, border_value=1)


def disc_collides(scene: SceneSpec, x: float, y: float, radius: float) -> bool:
    res = scene.resolution
    H, W = scene.shape
    r0, r1 = int(math.floor((x - radius) / res)), int(math.floor((x + radius) / res))
    c0, c1 = int(math.floor((y - radius) / res)), int(math.floor((y + radius) / res))
    if r0 < 0 or c0 < 0 or r1 >= H or c1 >= W:
        return True
    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    gx = np.maximum(np.abs((rr + 0.5) * res - x) - res / 2, 0.0)
    gy = np.maximum(np.abs((cc + 0.5) * res - y) - res / 2, 0.0)
    near = np.hypot(gx, gy) < radius
    return bool((scene.blocked[r0:r1 + 1, c0:c1 + 1] & near).any())


def swept_disc_free(scene: SceneSpec, p0, p1, radius: float) -> bool:
    """True if a disc moved in a straight line from p0 to p1 stays clear of blocked cells."""
    length = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    n = max(1, int(math.ceil(length / (scene.resolution / 4))))
    for i in range(n + 1):
        f = i / n
        if disc_collides(scene, p0[0] + f * (p1[0] - p0[0]), p0[1] + f * (p1[1] - p0[1]), radius):
            return False
    return True


def _bfs_reachable(mask: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    from scipy import ndimage

    lab, _ = ndimage.label(mask, structure=np.ones((3, 3)))
    if not mask[start]:
        return np.zeros_like(mask)
    return lab == lab[start]


def goal_region(scene: SceneSpec, success_radius: float, goals=None) -> np.ndarray:
    """Cells whose centre lies within `success_radius` of a goal object's cell centre."""
    from scipy import ndimage

    seed = np.zeros(scene.shape, dtype=bool)
    for k in scene.goal_objects(goals):
        a = np.asarray(scene.objects[k].cells)
        seed[a[:, 0], a[:, 1]] = True
    if not seed.any():
        return seed
    dist = ndimage.distance_transform_edt(~seed) * scene.resolution
    return dist <= success_radius + 1e-9


def validate_scene(scene: SceneSpec, agent_radius: float = 0.18, success_radius: float = 1.0) -> None:
    H, W = scene.shape
    for o in scene.objects:
        for r, c in o.cells:
            if not (0 <= r < H and 0 <= c < W):
                raise SceneError(f"object {o.label.phrase!r} has a cell outside the grid: {(r, c)}")
    sr, sc = scene.world_to_cell(scene.start.x, scene.start.y)
    if not scene.in_bounds(sr, sc) or scene.blocked[sr, sc]:
        raise StartBlockedError("start pose is inside a wall or object")
    if not scene.goal_objects():
        raise UnreachableGoalError("no object instance matches the goal labels")
    nav = navigable_mask(scene, agent_radius)
    if not nav[sr, sc]:
        nav = ~scene.blocked
    reach = _bfs_reachable(nav, (sr, sc))
    if not (reach & goal_region(scene, success_radius)).any():
        raise UnreachableGoalError("no goal instance is reachable from the start")


def load_scene(path, agent_radius: float = 0.18, success_radius: float = 1.0) -> SceneSpec:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SceneError(f"cannot parse scene file {path}: {e}") from e
    try:
        scene = SceneSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, SceneError):
            raise
        raise SceneError(f"malformed scene file {path}: {e}") from e
    validate_scene(scene, agent_radius, success_radius)
    return scene


def save_scene(scene: SceneSpec, path) -> None:
    Path(path).write_text(scene.to_json())


# -- rendering -------------------------------------------------------------------------


def render(scene: SceneSpec, pose: Pose, K: CameraIntrinsics, max_range: float = 10.0):
    """Depth image and per-pixel hit code (cell id, or a floor/ceiling/none code)."""
    dirs = camera_rays(pose, K)
    depth, hit = cast_rays(scene.cell_ids, scene.heights, scene.resolution, (pose.x, pose.y, pose.z),
                           scene.ceiling_height, max_range, dirs.reshape(-1, 3))
    return depth.reshape(K.height, K.width), hit.reshape(K.height, K.width)


def render_depth(scene: SceneSpec, pose: Pose, K: CameraIntrinsics, max_range: float = 10.0) -> np.ndarray:
    return render(scene, pose, K, max_range)[0]


def visible_instances(hit: np.ndarray, scene: SceneSpec) -> list[tuple[int, np.ndarray]]:
    """(object index, pixel mask) for every object whose columns are first hits somewhere."""
    ids = np.unique(hit[hit >= 2])
    return [(int(i) - 2, hit == i) for i in ids]


def ground_truth_masks(scene: SceneSpec, pose: Pose, K: CameraIntrinsics, max_range: float = 10.0):
    _, hit = render(scene, pose, K, max_range)
    return [(scene.objects[k].label, m) for k, m in visible_instances(hit, scene)]


# -- evaluation ------------------------------------------------------------------------


def line_of_sight(scene: SceneSpec, p0, cell: tuple[int, int], eye_height: float = DEFAULT_CAMERA_HEIGHT) -> bool:
    """True if the segment from p0 to the target cell's centre crosses no wall and no
    other column taller than the eye."""
    res = scene.resolution
    target = (cell[0] + 0.5, cell[1] + 0.5)
    path = ray_cells((p0[0] / res, p0[1] / res), target)
    ids = scene.cell_ids
    own = ids[cell]
    for r, c in path[:-1]:
        if not scene.in_bounds(r, c):
            return False
        cid = ids[r, c]
        if cid == WALL_ID:
            return False
        if cid >= 2 and cid != own and scene.heights[cid] >= eye_height:
            return False
    return True


def is_success(scene: SceneSpec, pose: Pose, success_radius: float = 1.0, goals=None) -> bool:
    best = None
    for k in scene.goal_objects(goals):
        a = np.asarray(scene.objects[k].cells)
        xs, ys = scene.cell_center(a[:, 0], a[:, 1])
        d = np.hypot(xs - pose.x, ys - pose.y)
        i = int(np.argmin(d))
        if best is None or d[i] < best[0]:
            best = (float(d[i]), (int(a[i, 0]), int(a[i, 1])))
    if best is None or best[0] > success_radius + 1e-9:
        return False
    return line_of_sight(scene, (pose.x, pose.y), best[1], pose.z)


def shortest_path_length(scene: SceneSpec, start: Pose, goals=None, success_radius: float = 1.0,
                         agent_radius: float = 0.0) -> float:
    """Geodesic metres from the start cell to the nearest cell within `success_radius` of a goal."""
    nav = navigable_mask(scene, agent_radius)
    sr, sc = scene.world_to_cell(start.x, start.y)
    if not nav[sr, sc]:
        nav = ~scene.blocked
    target = goal_region(scene, success_radius, goals) & nav
    if not target.any():
        raise UnreachableGoalError("no navigable cell within the success radius of a goal")
    D = dijkstra8(nav, np.argwhere(target), scene.resolution)
    d = float(D[sr, sc])
    if not math.isfinite(d):
        raise UnreachableGoalError("goal unreachable from start")
    return d


# -- stepping --------------------------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    depth: np.ndarray
    pose: Pose
    rgb_handle: bytes | None = None


@dataclass(frozen=True)
class StepOutcome:
    observation: Observation
    collided: bool
    done: bool


@dataclass
class SimConfig:
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics.from_hfov)
    max_range: float = 10.0
    depth_noise_sigma: float = 0.0
    agent_radius: float = 0.18
    success_radius: float = 1.0
    max_steps: int = 500
    forward_m: float = FORWARD_M
    turn_rad: float = TURN_RAD
    tilt_rad: float = TILT_RAD
    seed: int = 0


class Simulator:
    """One episode's world state. Not thread-safe; use one instance per episode."""

    def __init__(self, scene: SceneSpec, config: SimConfig | None = None):
        self.scene = scene
        self.config = config or SimConfig()
        self.reset()

    def reset(self, pose: Pose | None = None) -> Observation:
        self.pose = pose or self.scene.start
        self.steps = 0
        self.done = False
        self.rng = np.random.default_rng(self.config.seed)
        self._last = None
        return self.observe()

    def _render(self, pose: Pose):
        if self._last is None or self._last[0] != pose:
            self._last = (pose, render(self.scene, pose, self.config.camera, self.config.max_range))
        return self._last[1]

    def observe(self) -> Observation:
        depth, _ = self._render(self.pose)
        if self.config.depth_noise_sigma > 0:
            finite = np.isfinite(depth)
            noisy = depth.copy()
            noisy[finite] += self.rng.normal(0.0, self.config.depth_noise_sigma, int(finite.sum()))
            noisy[finite] = np.clip(noisy[finite], 0.0, self.config.max_range)
            depth = noisy
        return Observation(depth=depth, pose=self.pose)

    def visible_objects(self, pose: Pose | None = None) -> list[tuple[int, np.ndarray]]:
        _, hit = self._render(pose or self.pose)
        return visible_instances(hit, self.scene)

    def step(self, action: Action) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode already finished")
        action = Action(action)
        collided = False
        self.steps += 1
        if action is Action.STOP:
            self.done = True
        else:
            cfg = self.config
            new = pose_step(self.pose, action, cfg.forward_m, cfg.turn_rad, cfg.tilt_rad)
            if action is Action.MOVE_FORWARD and not swept_disc_free(
                    self.scene, self.pose.xy, new.xy, cfg.agent_radius):
                collided = True
            else:
                self.pose = new
        if self.steps >= self.config.max_steps:
            self.done = True
        return StepOutcome(self.observe(), collided, self.done)

    def is_success(self) -> bool:
        return is_success(self.scene, self.pose, self.config.success_radius)

    def shortest_path_length(self) -> float:
        return shortest_path_length(self.scene, self.scene.start, None, self.config.success_radius,
                                    self.config.agent_radius)


def step(scene: SceneSpec, pose: Pose, action: Action, steps_taken: int, config: SimConfig | None = None):
    """Functional single step: returns (StepOutcome, steps_taken + 1)."""
    sim = Simulator(scene, config)
    sim.pose = pose
    sim.steps = steps_taken
    return sim.step(action), sim.steps


def grid_index(scene: SceneSpec, pose: Pose) -> GridIndex:
    return GridIndex(*scene.world_to_cell(pose.x, pose.y))
