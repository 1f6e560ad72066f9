import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmnav.core import Action, CameraIntrinsics, ObjectLabel, Pose, camera_rays
from fmnav.scenegen import GeneratorParams, generate_scene
from fmnav.simulator import (SceneError, SimConfig, Simulator, StartBlockedError, UnreachableGoalError,
                             ground_truth_masks, is_success, load_scene, navigable_mask, render, render_depth,
                             save_scene, shortest_path_length, validate_scene)

from .conftest import block, box_room, make_scene
from .oracles import csgraph_dijkstra8, ray_march_depth

K_SMALL = CameraIntrinsics.from_hfov(64, 48)


def test_centre_ray_hits_wall_two_metres_ahead():
    # the wall face is at x = 0.05
    scene = make_scene(box_room(), objects=[("bed", block(40, 45, 40, 45), 0.5)], start=(2.05, 2.5), yaw=math.pi)
    d = render_depth(scene, scene.start, K_SMALL)
    assert (K_SMALL.cx, K_SMALL.cy) == (32.0, 24.0)
    assert d[24, 32] == pytest.approx(2.0, abs=1e-9)


def test_straight_down_sees_the_floor():
    scene = make_scene(objects=[("bed", block(70, 80, 70, 80), 0.5)])
    pose = Pose(2.5, 2.5, 0.88, 0.0, -math.pi / 2)
    d = render_depth(scene, pose, K_SMALL)
    assert d[24, 32] == pytest.approx(0.88, abs=1e-9)


def test_depth_matches_millimetre_ray_march():
    scene = generate_scene(4)
    rng = np.random.default_rng(1)
    free = np.argwhere(navigable_mask(scene, 0.2))
    for _ in range(4):
        r, c = free[rng.integers(len(free))]
        pose = Pose((r + 0.5) * 0.05, (c + 0.5) * 0.05, 0.88, rng.uniform(-math.pi, math.pi), rng.uniform(-0.5, 0.3))
        depth = render_depth(scene, pose, K_SMALL)
        us, vs = rng.integers(0, 64, 25), rng.integers(0, 48, 25)
        ref = ray_march_depth(scene, pose, camera_rays(pose, K_SMALL, us, vs))
        got = depth[vs, us]
        fin = np.isfinite(ref)
        assert np.array_equal(fin, np.isfinite(got))
        assert np.abs(got[fin] - ref[fin]).max() <= 0.002


def test_masks_are_disjoint_subsets_of_finite_depth():
    scene = generate_scene(2)
    rng = np.random.default_rng(2)
    free = np.argwhere(navigable_mask(scene, 0.2))
    for _ in range(50):
        r, c = free[rng.integers(len(free))]
        pose = Pose((r + 0.5) * 0.05, (c + 0.5) * 0.05, 0.88, rng.uniform(-math.pi, math.pi))
        depth, _ = render(scene, pose, K_SMALL)
        masks = ground_truth_masks(scene, pose, K_SMALL)
        total = np.zeros(depth.shape, dtype=int)
        for _, m in masks:
            total += m
        assert total.max() <= 1
        assert np.isfinite(depth[total > 0]).all()


def test_object_behind_wall_is_invisible():
    occ = box_room()
    occ[50, :] = True
    scene = make_scene(occ, objects=[("bed", block(70, 80, 40, 60), 0.5)], start=(1.0, 2.5), yaw=0.0)
    assert ground_truth_masks(scene, scene.start, K_SMALL) == []


def test_single_object_filling_view():
    scene = make_scene(objects=[("couch", block(50, 52, 1, 99), 2.4)], start=(2.4, 2.5), yaw=0.0,
                       goals=("couch",))
    depth, hit = render(scene, Pose(2.4, 2.5, 0.88, 0.0), K_SMALL)
    masks = ground_truth_masks(scene, scene.start, K_SMALL)
    assert len(masks) == 1
    m = masks[0][1]
    assert np.array_equal(m, hit == 2)
    assert m[24, 32]


def test_forward_moves_and_blocked_forward_collides():
    scene = make_scene(objects=[("bed", block(70, 80, 70, 80), 0.5)], start=(2.5, 2.5))
    sim = Simulator(scene, SimConfig(camera=K_SMALL))
    out = sim.step(Action.MOVE_FORWARD)
    assert not out.collided and out.observation.pose.x == pytest.approx(2.75)
    # 0.1 m of clearance beyond the body radius is not enough for a 0.25 m step
    sim.pose = Pose(5.0 - 0.05 - 0.18 - 0.1, 2.5, 0.88, 0.0)
    before = sim.pose
    out = sim.step(Action.MOVE_FORWARD)
    assert out.collided and out.observation.pose == before


def test_step_budget_ends_episode():
    scene = make_scene(objects=[("bed", block(70, 80, 70, 80), 0.5)])
    sim = Simulator(scene, SimConfig(camera=K_SMALL, max_steps=500))
    for i in range(500):
        out = sim.step(Action.TURN_LEFT)
        assert out.done == (i == 499)
    with pytest.raises(RuntimeError):
        sim.step(Action.TURN_LEFT)


def test_stop_ends_episode():
    scene = make_scene(objects=[("bed", block(70, 80, 70, 80), 0.5)])
    sim = Simulator(scene, SimConfig(camera=K_SMALL))
    assert sim.step(Action.STOP).done


def test_random_walks_never_enter_obstacles():
    scene = generate_scene(1)
    sim = Simulator(scene, SimConfig(camera=CameraIntrinsics.from_hfov(8, 6)))
    rng = np.random.default_rng(0)
    acts = [Action.MOVE_FORWARD, Action.MOVE_FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT]
    nav = navigable_mask(scene, 0.0)
    for _ in range(3000):
        if sim.done:
            sim.reset()
        sim.step(acts[rng.integers(4)])
        r, c = scene.world_to_cell(sim.pose.x, sim.pose.y)
        assert nav[r, c]


def test_determinism_of_observations():
    scene = generate_scene(5)
    seq = [Action.TURN_LEFT, Action.MOVE_FORWARD, Action.MOVE_FORWARD, Action.TURN_RIGHT, Action.LOOK_DOWN]

    def run():
        sim = Simulator(scene, SimConfig(camera=K_SMALL, depth_noise_sigma=0.01, seed=3))
        return [sim.step(a).observation.depth for a in seq]

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b, equal_nan=True)


def test_straight_corridor_path_length():
    occ = np.ones((12, 120), dtype=bool)
    occ[5:7, 1:119] = False
    # the goal occupies column 91, so the nearest cell in reach is column 90: 80 cells away
    scene = make_scene(occ, objects=[("bed", [(5, 91)], 0.5)], start=(5.5 * 0.05, 10.5 * 0.05))
    d = shortest_path_length(scene, scene.start, success_radius=0.05)
    assert d == pytest.approx(4.0, abs=0.05)


def test_l_corridor_path_length():
    occ = np.ones((80, 100), dtype=bool)
    occ[5, 5:85] = False  # 4 m along the row
    occ[5:67, 84] = False  # 3 m down the column
    scene = make_scene(occ, objects=[("bed", [(66, 84)], 0.5)], start=(5.5 * 0.05, 5.5 * 0.05))
    d = shortest_path_length(scene, scene.start, success_radius=0.05)
    assert d == pytest.approx(7.0, abs=2 * 0.05)


def test_shortest_path_matches_independent_dijkstra():
    scene = generate_scene(6)
    nav = navigable_mask(scene, 0.0)
    from fmnav.simulator import goal_region

    target = np.argwhere(goal_region(scene, 1.0) & nav)
    D = csgraph_dijkstra8(nav, target, scene.resolution)
    r, c = scene.world_to_cell(scene.start.x, scene.start.y)
    assert shortest_path_length(scene, scene.start) == pytest.approx(D[r, c], abs=scene.resolution)


def test_is_success_requires_visibility():
    occ = box_room()
    scene = make_scene(occ, objects=[("bed", [(50, 50)], 0.5)])
    assert is_success(scene, Pose(50.5 * 0.05 - 0.5, 50.5 * 0.05), 1.0)
    occ2 = occ.copy()
    occ2[45, 40:60] = True
    scene2 = make_scene(occ2, objects=[("bed", [(50, 50)], 0.5)])
    assert not is_success(scene2, Pose(50.5 * 0.05 - 0.5, 50.5 * 0.05), 1.0)


def test_success_on_unit_ring():
    scene = make_scene(objects=[("bed", [(50, 50)], 0.5)])
    cx = cy = 50.5 * 0.05
    for a in np.linspace(-math.pi, math.pi, 24, endpoint=False):
        assert is_success(scene, Pose(cx + math.cos(a), cy + math.sin(a)), 1.0)
        assert not is_success(scene, Pose(cx + 1.01 * math.cos(a), cy + 1.01 * math.sin(a)), 1.0)


def test_scene_roundtrip_and_validation(tmp_path):
    scene = generate_scene(7)
    p = tmp_path / "s.json"
    save_scene(scene, p)
    back = load_scene(p)
    assert back.to_json() == scene.to_json()
    assert json.loads(p.read_text())["format_version"] == 1


def test_minimal_room_loads(tmp_path):
    scene = make_scene(box_room(10 * 20 // 10, 10 * 20 // 10), objects=[("bed", block(10, 14, 10, 14), 0.5)],
                       start=(0.3, 0.3))
    p = tmp_path / "room.json"
    save_scene(scene, p)
    assert len(load_scene(p).objects) == 1


def test_walled_off_goal_rejected():
    occ = box_room()
    occ[60, :] = True
    scene = make_scene(occ, objects=[("bed", block(80, 85, 80, 85), 0.5)])
    with pytest.raises(UnreachableGoalError):
        validate_scene(scene)


def test_start_in_wall_rejected():
    scene = make_scene(objects=[("bed", block(80, 85, 80, 85), 0.5)], start=(0.01, 0.01))
    with pytest.raises(StartBlockedError):
        validate_scene(scene)


def test_bad_files_rejected(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(SceneError):
        load_scene(p)
    d = generate_scene(0).to_dict()
    d["format_version"] = 99
    p.write_text(json.dumps(d))
    with pytest.raises(SceneError):
        load_scene(p)


def test_generator_is_deterministic():
    assert generate_scene(11).to_json() == generate_scene(11).to_json()
    assert generate_scene(11).to_json() != generate_scene(12).to_json()


def test_generated_scenes_validate_and_keep_toilets_near_bathtubs():
    near = 0
    for seed in range(100):
        s = generate_scene(seed)
        validate_scene(s)
        toilets = [o for o in s.objects if o.label.name == "toilet"]
        tubs = [o for o in s.objects if o.label.name == "bathtub"]
        ok = any(math.dist(t.centroid_rc, b.centroid_rc) * s.resolution <= 3.0 for t in toilets for b in tubs)
        near += ok
    assert near >= 90


def test_generator_params_validation():
    with pytest.raises(ValueError):
        GeneratorParams(room_grid=(0, 1)).validate()
    with pytest.raises(ValueError):
        GeneratorParams(vocabulary={}).validate()
    with pytest.raises(ValueError):
        GeneratorParams.from_dict({"bogus": 1})


@given(st.floats(0.3, 4.7), st.floats(0.3, 4.7), st.floats(-math.pi, math.pi))
@settings(max_examples=30, deadline=None)
def test_depth_triangle_bound(x, y, yaw):
    """Reported depth is never shorter than the distance to the first blocked cell, minus a diagonal."""
    scene = make_scene(objects=[("bed", block(40, 50, 40, 50), 0.6)], start=(x, y))
    pose = Pose(x, y, 0.88, yaw)
    if scene.blocked[scene.world_to_cell(x, y)]:
        return
    d, hit = render(scene, pose, CameraIntrinsics.from_hfov(16, 12))
    blocked = np.argwhere(scene.blocked)
    centres = (blocked + 0.5) * 0.05
    nearest = np.hypot(centres[:, 0] - x, centres[:, 1] - y).min()
    rays = camera_rays(pose, CameraIntrinsics.from_hfov(16, 12))
    horiz = np.hypot(rays[..., 0], rays[..., 1])
    side = hit >= 1
    assert (d[side] * horiz[side] >= nearest - 0.05 * math.sqrt(2) - 1e-9).all()
