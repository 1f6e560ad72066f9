"""Procedural multi-room scenes with a co-occurrence placement prior."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_CAMERA_HEIGHT, ObjectLabel, Pose
from .simulator import SceneError, SceneObject, SceneSpec, navigable_mask, validate_scene

# name: (length along wall m, depth from wall m, height m, (min count, max count))
ROOM_VOCAB: dict[str, dict[str, tuple]] = {
    "bedroom": {
        "bed": (1.4, 1.9, 0.6, (1, 1)),
        "nightstand": (0.45, 0.45, 0.55, (1, 2)),
        "wardrobe": (1.2, 0.6, 2.0, (0, 1)),
        "tv": (1.0, 0.3, 1.2, (0, 1)),
        "painting": (0.8, 0.1, 1.8, (0, 1)),
        "plant": (0.4, 0.4, 1.0, (0, 1)),
    },
    "bathroom": {
        "bathtub": (1.6, 0.75, 0.6, (1, 1)),
        "toilet": (0.45, 0.7, 0.75, (1, 1)),
        "sink": (0.6, 0.5, 0.9, (1, 1)),
        "towel": (0.5, 0.15, 1.2, (0, 1)),
        "shower": (0.9, 0.9, 2.0, (0, 1)),
        "trashcan": (0.3, 0.3, 0.4, (0, 1)),
    },
    "living room": {
        "couch": (2.0, 0.9, 0.85, (1, 1)),
        "tv": (1.2, 0.4, 1.3, (1, 1)),
        "painting": (0.8, 0.1, 1.8, (0, 2)),
        "chair": (0.5, 0.5, 0.9, (0, 2)),
        "plant": (0.4, 0.4, 1.0, (0, 1)),
        "table": (1.2, 0.8, 0.75, (0, 1)),
    },
    "kitchen": {
        "refrigerator": (0.8, 0.7, 1.8, (1, 1)),
        "sink": (0.6, 0.5, 0.9, (1, 1)),
        "table": (1.2, 0.8, 0.75, (0, 1)),
        "chair": (0.5, 0.5, 0.9, (1, 2)),
        "trashcan": (0.3, 0.3, 0.4, (0, 1)),
    },
    "office": {
        "desk": (1.4, 0.7, 0.75, (1, 1)),
        "chair": (0.5, 0.5, 0.9, (1, 1)),
        "plant": (0.4, 0.4, 1.0, (0, 1)),
        "trashcan": (0.3, 0.3, 0.4, (0, 1)),
        "painting": (0.8, 0.1, 1.8, (0, 1)),
    },
}

COLORS = ("red", "blue", "green", "white", "black", "brown")
COLORED = frozenset({"chair", "couch", "bed", "towel", "plant"})
GOAL_CATEGORIES = ("chair", "couch", "plant", "bed", "toilet", "tv")


@dataclass
class GeneratorParams:
    room_grid: tuple[int, int] = (2, 2)
    room_size_range: tuple[float, float] = (3.0, 4.5)
    wall_thickness: float = 0.1
    door_width: float = 1.0
    extra_door_prob: float = 0.25
    resolution: float = 0.05
    ceiling_height: float = 2.5
    room_types: tuple[str, ...] = ("bedroom", "bathroom", "living room", "kitchen", "office")
    required_rooms: tuple[str, ...] = ("bedroom", "bathroom", "living room")
    vocabulary: dict = field(default_factory=lambda: ROOM_VOCAB)
    cooccurrence: dict = field(default_factory=lambda: {"toilet": ("bathtub",)})
    cooccur_radius: float = 2.0
    goal_categories: tuple[str, ...] = GOAL_CATEGORIES
    attribute_prob: float = 0.5
    attributed_goal_prob: float = 0.0
    camera_height: float = DEFAULT_CAMERA_HEIGHT
    agent_radius: float = 0.18
    max_attempts: int = 20

    def validate(self) -> None:
        if self.room_grid[0] * self.room_grid[1] < 1:
            raise ValueError("room count must be >= 1")
        if not self.vocabulary or not any(self.vocabulary.values()):
            raise ValueError("object vocabulary must be non-empty")
        if self.room_size_range[0] <= 2 * self.door_width * 0.5 or self.room_size_range[0] > self.room_size_range[1]:
            raise ValueError("room_size_range infeasible for the door width")

    def to_dict(self) -> dict:
        return {
            "room_grid": list(self.room_grid), "room_size_range": list(self.room_size_range),
            "wall_thickness": self.wall_thickness, "door_width": self.door_width,
            "extra_door_prob": self.extra_door_prob, "resolution": self.resolution,
            "ceiling_height": self.ceiling_height, "room_types": list(self.room_types),
            "required_rooms": list(self.required_rooms),
            "cooccurrence": {k: list(v) for k, v in self.cooccurrence.items()},
            "cooccur_radius": self.cooccur_radius, "goal_categories": list(self.goal_categories),
            "attribute_prob": self.attribute_prob, "attributed_goal_prob": self.attributed_goal_prob,
            "camera_height": self.camera_height, "agent_radius": self.agent_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        p = cls()
        for k, v in d.items():
            if not hasattr(p, k):
                raise ValueError(f"unknown generator parameter {k!r}")
            if k == "cooccurrence":
                v = {a: tuple(b) if isinstance(b, (list, tuple)) else (b,) for a, b in v.items()}
            elif isinstance(getattr(p, k), tuple):
                v = tuple(v)
            setattr(p, k, v)
        return p


@dataclass
class _Room:
    index: int
    r0: int
    r1: int  # interior rows [r0, r1)
    c0: int
    c1: int
    kind: str = ""


def _cells(n_m: float, res: float) -> int:
    return max(1, int(round(n_m / res)))


def _layout(rng, p: GeneratorParams):
    res = p.resolution
    t = _cells(p.wall_thickness, res)
    R, C = p.room_grid
    hs = [_cells(rng.uniform(*p.room_size_range), res) for _ in range(R)]
    ws = [_cells(rng.uniform(*p.room_size_range), res) for _ in range(C)]
    H = sum(hs) + (R + 1) * t
    W = sum(ws) + (C + 1) * t
    occ = np.ones((H, W), dtype=bool)
    rooms = []
    r = t
    for i in range(R):
        c = t
        for j in range(C):
            rooms.append(_Room(i * C + j, r, r + hs[i], c, c + ws[j]))
            occ[r:r + hs[i], c:c + ws[j]] = False
            c += ws[j] + t
        r += hs[i] + t
    # doors: random spanning tree over the room grid plus optional extra edges
    edges = []
    for i in range(R):
        for j in range(C):
            if j + 1 < C:
                edges.append((i * C + j, i * C + j + 1))
            if i + 1 < R:
                edges.append((i * C + j, (i + 1) * C + j))
    order = rng.permutation(len(edges))
    parent = list(range(R * C))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    doors = []
    for e in order:
        a, b = edges[e]
        if find(a) != find(b):
            parent[find(a)] = find(b)
            doors.append((a, b))
        elif rng.random() < p.extra_door_prob:
            doors.append((a, b))
    dw = _cells(p.door_width, res)
    margin = _cells(0.3, res)
    door_cells = []
    for a, b in doors:
        ra, rb = rooms[a], rooms[b]
        if ra.r0 == rb.r0:  # side by side: wall between columns
            lo, hi = ra.r0 + margin, ra.r1 - margin - dw
            s = int(rng.integers(lo, max(lo, hi) + 1))
            occ[s:s + dw, ra.c1:rb.c0] = False
            door_cells.append((s, s + dw, ra.c1, rb.c0))
        else:
            lo, hi = ra.c0 + margin, ra.c1 - margin - dw
            s = int(rng.integers(lo, max(lo, hi) + 1))
            occ[ra.r1:rb.r0, s:s + dw] = False
            door_cells.append((ra.r1, rb.r0, s, s + dw))
    return occ, rooms, doors, door_cells


def _room_graph_dist(n: int, doors, src: int) -> list[int]:
    adj = {i: set() for i in range(n)}
    for a, b in doors:
        adj[a].add(b)
        adj[b].add(a)
    dist = [-1] * n
    dist[src] = 0
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            for v in sorted(adj[u]):
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def _placement_order(vocab: dict, cooccur: dict) -> list[str]:
    # each dependent right after its last anchor, so nearby wall space is still free
    names = list(vocab)
    order = [n for n in names if n not in cooccur]
    for n in names:
        if n in cooccur:
            idx = [order.index(a) for a in cooccur[n] if a in order]
            order.insert(max(idx) + 1 if idx else len(order), n)
    return order


def _place_objects(rng, p: GeneratorParams, occ, rooms, door_cells):
    res = p.resolution
    H, W = occ.shape
    taken = occ.copy()
    keepout = np.zeros_like(occ)
    clear = _cells(0.9, res)
    for r0, r1, c0, c1 in door_cells:
        keepout[max(0, r0 - clear):r1 + clear, max(0, c0 - clear):c1 + clear] = True
    objects: list[tuple[str, tuple, np.ndarray, float, int]] = []
    for room in rooms:
        vocab = p.vocabulary.get(room.kind, {})
        for name in _placement_order(vocab, p.cooccurrence):
            length, depth, height, (lo, hi) = vocab[name]
            count = int(rng.integers(lo, hi + 1))
            partners = p.cooccurrence.get(name, ())
            for _ in range(count):
                L, D = _cells(length, res), _cells(depth, res)
                anchors = [o for o in objects if o[0] in partners and o[4] == room.index]
                placed = None
                for attempt in range(200):
                    side = int(rng.integers(4))
                    if side < 2:  # against a wall of constant row
                        h_, w_ = D, L
                    else:
                        h_, w_ = L, D
                    if h_ > room.r1 - room.r0 or w_ > room.c1 - room.c0:
                        continue
                    if side == 0:
                        r = room.r0
                        c = int(rng.integers(room.c0, room.c1 - w_ + 1))
                    elif side == 1:
                        r = room.r1 - h_
                        c = int(rng.integers(room.c0, room.c1 - w_ + 1))
                    elif side == 2:
                        c = room.c0
                        r = int(rng.integers(room.r0, room.r1 - h_ + 1))
                    else:
                        c = room.c1 - w_
                        r = int(rng.integers(room.r0, room.r1 - h_ + 1))
                    g = 2  # gap cells to neighbours
                    if taken[r:r + h_, c:c + w_].any() or _overlaps(objects, r, c, h_, w_, g):
                        continue
                    if keepout[r:r + h_, c:c + w_].any():
                        continue
                    cen = (r + (h_ - 1) / 2.0, c + (w_ - 1) / 2.0)
                    if anchors and attempt < 160:
                        dmin = min(math.hypot(cen[0] - a[2][0], cen[1] - a[2][1]) for a in anchors) * res
                        if dmin > p.cooccur_radius:
                            continue
                    placed = (r, c, h_, w_, cen)
                    break
                if placed is None:
                    continue
                r, c, h_, w_, cen = placed
                taken[r:r + h_, c:c + w_] = True
                attrs = ()
                if name in COLORED and rng.random() < p.attribute_prob:
                    attrs = (str(COLORS[int(rng.integers(len(COLORS)))]),)
                cells = tuple((i, j) for i in range(r, r + h_) for j in range(c, c + w_))
                objects.append((name, attrs, np.array(cen), height, room.index, cells))
    return objects


def _overlaps(objects, r, c, h_, w_, g):
    # walls may touch (objects sit against them); other objects need a gap
    for o in objects:
        cells = o[5]
        rs = [x[0] for x in cells]
        cs = [x[1] for x in cells]
        if r - g < max(rs) + 1 and min(rs) < r + h_ + g and c - g < max(cs) + 1 and min(cs) < c + w_ + g:
            return True
    return False


def generate_scene(seed: int, params: GeneratorParams | None = None) -> SceneSpec:
    """Deterministic procedural scene for `seed`."""
    p = params or GeneratorParams()
    p.validate()
    ss = np.random.SeedSequence(seed)
    last_err = None
    for attempt, child in enumerate(ss.spawn(p.max_attempts)):
        rng = np.random.default_rng(child)
        try:
            return _generate_once(rng, p, seed, attempt)
        except SceneError as e:
            last_err = e
    raise SceneError(f"generator params infeasible after {p.max_attempts} attempts: {last_err}")


def _generate_once(rng, p: GeneratorParams, seed: int, attempt: int) -> SceneSpec:
    res = p.resolution
    occ, rooms, doors, door_cells = _layout(rng, p)
    n = len(rooms)
    kinds = [k for k in p.required_rooms if k in p.room_types][:n]
    others = [k for k in p.room_types if k not in kinds]
    while len(kinds) < n:
        kinds.append(others[int(rng.integers(len(others)))] if others else p.room_types[int(rng.integers(len(p.room_types)))])
    kinds = [kinds[i] for i in rng.permutation(n)]
    for room, kind in zip(rooms, kinds):
        room.kind = kind
    placed = _place_objects(rng, p, occ, rooms, door_cells)
    if not placed:
        raise SceneError("no objects placed")

    # goal: prefer categories confined to a single room
    by_cat: dict[str, set[int]] = {}
    for name, _, _, _, ri, _ in placed:
        if name in p.goal_categories:
            by_cat.setdefault(name, set()).add(ri)
    if not by_cat:
        raise SceneError("no goal category present")
    cats = sorted(by_cat)
    single = [c for c in cats if len(by_cat[c]) == 1]
    pool = single or cats
    goal_name = pool[int(rng.integers(len(pool)))]
    goal_rooms = sorted(by_cat[goal_name])

    dist = None
    for gr in goal_rooms:
        d = _room_graph_dist(n, doors, gr)
        dist = d if dist is None else [min(a, b) for a, b in zip(dist, d)]
    far = max(dist)
    start_rooms = [i for i in range(n) if dist[i] == far]
    start_room = rooms[start_rooms[int(rng.integers(len(start_rooms)))]]

    objects = [SceneObject(ObjectLabel(name, attrs), cells, float(h)) for name, attrs, _, h, _, cells in placed]
    goal = ObjectLabel(goal_name)
    if p.attributed_goal_prob > 0 and rng.random() < p.attributed_goal_prob:
        same = [o for o in objects if o.label.name == goal_name]
        colored = [o for o in same if o.label.attributes]
        if colored:
            pick = colored[int(rng.integers(len(colored)))].label
            if sum(1 for o in same if pick.attributes[0] in o.label.attributes) == 1:
                goal = pick

    scene = SceneSpec(res, occ, p.ceiling_height, objects, Pose(0.0, 0.0, p.camera_height), [goal])
    nav = navigable_mask(scene, p.agent_radius + 0.1)
    room_mask = np.zeros_like(nav)
    room_mask[start_room.r0:start_room.r1, start_room.c0:start_room.c1] = True
    cand = np.argwhere(nav & room_mask)
    if not len(cand):
        raise SceneError("no free start cell")
    r, c = cand[int(rng.integers(len(cand)))]
    yaw = float(rng.uniform(-math.pi, math.pi))
    scene.start = Pose((r + 0.5) * res, (c + 0.5) * res, p.camera_height, yaw, 0.0)
    scene.meta = {
        "seed": int(seed), "attempt": attempt,
        "rooms": [{"kind": rm.kind, "rows": [rm.r0, rm.r1], "cols": [rm.c0, rm.c1]} for rm in rooms],
        "doors": [list(d) for d in doors],
        "start_room": start_room.index,
        "goal_rooms": goal_rooms,
    }
    validate_scene(scene, p.agent_radius)
    return scene
