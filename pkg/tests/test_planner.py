import math

import numpy as np
import pytest

from fmnav.core import Action, GridIndex, Pose
from fmnav.mapping import VSSM, MapGeometry
from fmnav.planner import (PlanningError, ReplanNeeded, best_heading, compute_field, disc_footprint,
                           handle_collision, inflate, next_action)
from fmnav.simulator import SimConfig, Simulator

from .conftest import make_scene
from .oracles import csgraph_dijkstra8, euclidean_from

RES = 0.05


def known_map(occ):
    """Fully explored map whose occupied layer is the given grid; origin at world (0, 0)."""
    m = VSSM(MapGeometry(RES, occ.shape[0], occ.shape[1], (0.0, 0.0)))
    m.occupied[:] = occ.astype(np.float32)
    m.explored[:] = 1.0
    m._recompute_box()
    return m


def u_wall(n=120):
    occ = np.zeros((n, n), dtype=bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    occ[30:90, 40] = True  # the U opens towards the top of the map
    occ[90, 40:80] = True
    occ[30:91, 80] = True
    return occ


def spiral(n=120, corridor=20):
    """Nested square walls whose single gaps alternate sides, forcing a winding route inward."""
    occ = np.zeros((n, n), dtype=bool)
    for k, off in enumerate(range(0, n // 2 - corridor // 2, corridor)):
        lo, hi = off, n - 1 - off
        occ[lo, lo:hi + 1] = occ[hi, lo:hi + 1] = True
        occ[lo:hi + 1, lo] = occ[lo:hi + 1, hi] = True
        if k:
            gap = slice(n // 2 - 6, n // 2 + 6)
            if k % 2:
                occ[lo, gap] = False
            else:
                occ[hi, gap] = False
    return occ


def test_goal_cell_is_zero_and_blocked_cells_inf():
    occ = u_wall()
    f = compute_field(known_map(occ), GridIndex(60, 60), agent_radius=0.0, inflation_margin=0.0, stop_slack=None)
    assert f.value(60, 60) == 0.0
    assert not np.isfinite(f.full(occ.shape)[occ]).any()


def test_u_wall_geodesic():
    occ = u_wall()
    goal, agent = (60, 60), (60, 20)
    f = compute_field(known_map(occ), GridIndex(*goal), agent_radius=0.0, inflation_margin=0.0, stop_slack=None)
    T = f.full(occ.shape)
    ref = csgraph_dijkstra8(~occ, np.array([goal]), RES)
    straight = euclidean_from(np.array([goal]), occ.shape, RES)[agent]
    t = T[agent]
    assert t > straight * 1.5
    assert t <= ref[agent] + RES
    assert abs(t - ref[agent]) / ref[agent] <= 0.10


def test_inflation_blocks_near_walls():
    occ = u_wall()
    f = compute_field(known_map(occ), GridIndex(60, 60), agent_radius=0.18, inflation_margin=0.05, stop_slack=None)
    r = (0.18 + 0.05) / RES
    expect = ~inflate(occ, r)
    r0, c0 = f.offset
    h, w = f.traversable.shape
    assert np.array_equal(f.traversable, expect[r0:r0 + h, c0:c0 + w])
    assert disc_footprint(r).sum() > math.pi * (r - 1) ** 2


def test_goal_snaps_out_of_obstacle():
    occ = u_wall()
    f = compute_field(known_map(occ), GridIndex(60, 40), agent_radius=0.18, stop_slack=None)
    assert len(f.goal_cells) and all(f.value(r, c) == 0 for r, c in f.goal_cells)
    d = np.hypot(f.goal_cells[:, 0] - 60, f.goal_cells[:, 1] - 40) * RES
    assert d.max() <= 0.5 + 1e-9
    thick = np.zeros((120, 120), dtype=bool)
    thick[30:90, 30:90] = True
    with pytest.raises(PlanningError):
        compute_field(known_map(thick), GridIndex(60, 60), agent_radius=0.18)


def test_unexplored_is_traversable():
    m = VSSM(MapGeometry(RES, 80, 80, (0.0, 0.0)))
    m.explored[35:45, 35:45] = 1.0
    m._recompute_box()
    f = compute_field(m, GridIndex(70, 70), agent_cell=GridIndex(40, 40), stop_slack=None)
    assert math.isfinite(f.value(40, 40))


def test_field_is_deterministic():
    m = known_map(spiral())
    a = compute_field(m, GridIndex(60, 60), stop_slack=None)
    b = compute_field(m.copy(), GridIndex(60, 60), stop_slack=None)
    assert a.values.tobytes() == b.values.tobytes()


def _field_toward(goal_xy, yaw, n=100):
    m = known_map(np.zeros((n, n), dtype=bool))
    g = GridIndex(int(goal_xy[0] / RES), int(goal_xy[1] / RES))
    return compute_field(m, g, agent_radius=0.0, stop_slack=None), Pose(2.5, 2.5, 0.88, yaw)


def test_goal_ahead_moves_forward():
    f, pose = _field_toward((4.5, 2.5), 0.0)
    assert next_action(f, pose) is Action.MOVE_FORWARD


def test_goal_behind_turns_left():
    f, pose = _field_toward((0.5, 2.5), 0.0)
    assert best_heading(f, pose) == 6
    assert next_action(f, pose) is Action.TURN_LEFT


@pytest.mark.parametrize("goal, want", [((2.5, 4.5), Action.TURN_LEFT), ((2.5, 0.5), Action.TURN_RIGHT)])
def test_turns_toward_the_shorter_side(goal, want):
    f, pose = _field_toward(goal, 0.0)
    assert next_action(f, pose) is want


def test_infinite_agent_cell_needs_replan():
    occ = u_wall()
    f = compute_field(known_map(occ), GridIndex(60, 60), agent_radius=0.0, inflation_margin=0.0, stop_slack=None)
    with pytest.raises(ReplanNeeded):
        next_action(f, Pose(0.02, 0.02))


def test_greedy_descent_through_spiral():
    occ = spiral()
    scene = make_scene(occ, start=(0.6, 0.6), yaw=0.0, goals=())
    goal = GridIndex(60, 60)
    f = compute_field(known_map(occ), goal, agent_radius=0.18, stop_slack=None)
    sim = Simulator(scene, SimConfig(max_steps=2000))
    pose = scene.start
    geodesic = f.value(*f.cell_of(pose.x, pose.y))
    assert math.isfinite(geodesic)
    forwards, prev = 0, geodesic
    for _ in range(2000):
        here = f.value(*f.cell_of(pose.x, pose.y))
        assert here <= prev + RES
        prev = here
        if here <= 0.25:
            break
        a = next_action(f, pose)
        out = sim.step(a)
        assert not out.collided
        pose = sim.pose
        forwards += a is Action.MOVE_FORWARD
    else:
        pytest.fail("descent did not reach the goal")
    assert forwards <= 1.5 * geodesic / 0.25


def test_collision_marks_cell_ahead():
    m = VSSM(MapGeometry(RES, 100, 100, (0.0, 0.0)))
    m.explored[:] = 1.0
    m._recompute_box()
    pose = Pose(1.0, 2.5, 0.88, 0.0)
    assert handle_collision(m, pose, Action.MOVE_FORWARD, collided=False) is None
    assert handle_collision(m, pose, Action.TURN_LEFT) is None
    assert not m.occupied.any()
    cell = handle_collision(m, pose)
    assert cell == GridIndex(25, 50) and m.occupied[25, 50] == 1.0
    before = m.occupied.copy()
    assert handle_collision(m, pose) == cell and np.array_equal(before, m.occupied)

    # a glass pane along row 25 that depth never saw: after bumping into it at several
    # spots the field routes around it
    for c in range(40, 61):
        m.mark_occupied(np.array([[25, c]]))
    f = compute_field(m, GridIndex(60, 50), agent_radius=0.18, stop_slack=None)
    assert not np.isfinite(f.value(25, 50))
    here = f.value(*f.cell_of(pose.x, pose.y))
    assert here > 3.0 * 1.05
