"""Time the compiled and fallback paths of each hot kernel on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json] [--episode]

Every pair is also checked for identical output. ``--episode`` additionally
times one short episode in a subprocess with and without FMNAV_DISABLE_NUMBA.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from fmnav.core import CameraIntrinsics, camera_rays
from fmnav.kernels import USE_NUMBA, cast_rays_numba, cast_rays_numpy, mark_rays_numba, mark_rays_numpy
from fmnav.kernels import fmm as fmm_mod
from fmnav.scenegen import generate_scene


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def random_occupancy(n, density, seed):
    rng = np.random.default_rng(seed)
    trav = rng.random((n, n)) >= density
    trav[n // 2, n // 2] = True
    return trav


def cases():
    scene = generate_scene(0)
    pose = scene.start
    K = CameraIntrinsics.from_hfov(320, 240)
    dirs = camera_rays(pose, K).reshape(-1, 3)
    ids, heights = scene.cell_ids, scene.heights
    origin = (pose.x, pose.y, pose.z)
    yield ("raycast 320x240",
           lambda: cast_rays_numba(ids, heights, scene.resolution, origin, scene.ceiling_height, 10.0, dirs),
           lambda: cast_rays_numpy(ids, heights, scene.resolution, origin, scene.ceiling_height, 10.0, dirs))

    rng = np.random.default_rng(1)
    ends = rng.uniform(0, 400, size=(20000, 2))
    yield ("mark_rays 20k",
           lambda: mark_rays_numba((200.5, 200.5), ends, np.zeros((400, 400), np.uint8)),
           lambda: mark_rays_numpy((200.5, 200.5), ends, np.zeros((400, 400), np.uint8)))

    trav = random_occupancy(128, 0.2, 2)
    seeds = np.array([[64, 64]], dtype=np.int64)
    yield ("fmm 128x128",
           lambda: fmm_mod._fmm_loop(trav, seeds, 0.05, -1, 0.0),
           lambda: fmm_mod._fmm_loop.py_func(trav, seeds, 0.05, -1, 0.0))
    yield ("dijkstra8 128x128",
           lambda: fmm_mod._dijkstra_loop(trav, seeds, 0.05),
           lambda: fmm_mod._dijkstra_loop.py_func(trav, seeds, 0.05))


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def episode_seconds(disable):
    env = dict(os.environ, FMNAV_DISABLE_NUMBA="1" if disable else "0")
    code = ("import time; from fmnav.agent import AgentConfig, run_episode; from fmnav.scenegen import "
            "generate_scene; s = generate_scene(9); run_episode(s, 'Find the bed.', 'mock', "
            "AgentConfig(seed=9, image_width=160, image_height=120, max_steps=5)); t = time.perf_counter(); "
            "r = run_episode(s, 'Find the bed.', 'mock', AgentConfig(seed=9, image_width=160, "
            "image_height=120)); print(time.perf_counter() - t, r.steps)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    secs, steps = out.stdout.split()
    return float(secs), int(steps)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    ap.add_argument("--episode", action="store_true")
    args = ap.parse_args()
    if not USE_NUMBA:
        sys.exit("numba is disabled in this process; unset FMNAV_DISABLE_NUMBA to compare both paths")

    rows = []
    print(f"{'kernel':<20} {'numba ms':>10} {'fallback ms':>12} {'speedup':>8}  identical")
    for name, fast, slow in cases():
        fast()  # compile outside the timing
        tf, a = best_of(fast, args.repeat)
        ts, b = best_of(slow, max(1, args.repeat // 2))
        ok = same(a, b)
        rows.append({"kernel": name, "numba_s": tf, "fallback_s": ts, "speedup": ts / tf, "identical": ok})
        print(f"{name:<20} {tf * 1e3:>10.2f} {ts * 1e3:>12.2f} {ts / tf:>8.1f}  {ok}")
    if args.episode:
        (tn, n1), (tp, n2) = episode_seconds(False), episode_seconds(True)
        rows.append({"kernel": "episode", "numba_s": tn, "fallback_s": tp, "speedup": tp / tn,
                     "identical": n1 == n2})
        print(f"{'episode (' + str(n1) + ' steps)':<20} {tn * 1e3:>10.0f} {tp * 1e3:>12.0f} {tp / tn:>8.1f}  "
              f"{n1 == n2}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=1)
    if not all(r["identical"] for r in rows):
        sys.exit(1)


if __name__ == "__main__":
    main()
