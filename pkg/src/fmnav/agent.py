"""The navigation loop: propose goals, perceive, map, pick exploit or frontier goals, plan, act."""
from __future__ import annotations

import json
import math
import pickle
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import Action, CameraIntrinsics, GridIndex, Instruction, ObjectLabel, Pose, dedup_labels
from .frontier import FrontierConfig, frontier_alive, sample_frontiers
from .kernels import ray_cells
from .mapping import OCCUPIED_THRESHOLD, VSSM, MapGeometry, deserialize, serialize
from .perception import build_prompt, filter_by_confidence
from .planner import PlanningError, ReplanNeeded, best_heading, compute_field, handle_collision, next_action
from .reasoning import ProviderError, pick_frontier, should_discover
from .simulator import SceneSpec, SimConfig, Simulator, is_success, shortest_path_length

PRIOR_OBJECTS = ("chair", "bed", "plant", "toilet", "tv", "couch", "desk", "refrigerator", "sink",
                 "bathtub", "shower", "towel", "painting", "trashcan", "stairs")

COLLISION, EXPLORATION, DETECTION = "Collision", "Exploration", "Detection"


@dataclass
class AgentConfig:
    # values fixed by the method
    sigma_freq: float = 0.01
    delta: int = 20
    confidence_threshold: float = 0.55
    temperature: float = 0.0
    prior_objects: tuple[str, ...] = PRIOR_OBJECTS
    # episode
    max_steps: int = 500
    success_radius: float = 1.0
    seed: int = 0
    # body and sensor
    agent_radius: float = 0.18
    camera_height: float = 0.88
    image_width: int = 640
    image_height: int = 480
    hfov_deg: float = 79.0
    max_range: float = 10.0
    depth_noise_sigma: float = 0.0
    # map, frontiers, planner
    resolution: float = 0.05
    map_size_m: float = 48.0
    fusion: str = "max"
    frontier_min_size: int = 5
    frontier_radius: float = 2.0
    max_frontiers: int = 8
    replan_interval: int = 10
    inflation_margin: float = 0.05
    stop_margin: float = 0.15
    reach_radius: float = 0.5
    stuck_patience: int = 40
    early_rescore: bool = True  # off: frontier goals only change every `delta` steps
    collision_window: int = 10
    # providers and ablations
    scorer: str = "cooccurrence"
    no_cot: bool = False
    no_discovery: bool = False
    no_scoring: bool = False
    weak_llm: bool = False
    model: str = "gpt-4"
    weak_model: str = "gpt-3.5-turbo"

    def __post_init__(self):
        self.prior_objects = tuple(self.prior_objects)
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.sigma_freq <= 1.0:
            raise ValueError("sigma_freq must be in [0, 1]")
        if self.delta < 1 or self.max_steps < 1:
            raise ValueError("delta and max_steps must be positive")
        if self.scorer not in ("cooccurrence", "random"):
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.no_scoring and self.scorer == "random":
            raise ValueError("no_scoring has nothing to replace when frontiers are picked at random")
        if self.stop_margin >= self.success_radius:
            raise ValueError("stop_margin must be smaller than success_radius")

    @property
    def prior_labels(self) -> list[ObjectLabel]:
        return [ObjectLabel(n) for n in self.prior_objects]

    @property
    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_hfov(self.image_width, self.image_height, self.hfov_deg)

    @property
    def chat_model(self) -> str:
        return self.weak_model if self.weak_llm else self.model

    def frontier_config(self) -> FrontierConfig:
        return FrontierConfig(min_size=self.frontier_min_size, radius=self.frontier_radius,
                              threshold=self.confidence_threshold, max_frontiers=self.max_frontiers)

    def sim_config(self) -> SimConfig:
        return SimConfig(camera=self.camera, max_range=self.max_range, depth_noise_sigma=self.depth_noise_sigma,
                         agent_radius=self.agent_radius, success_radius=self.success_radius,
                         max_steps=self.max_steps, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prior_objects"] = list(self.prior_objects)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)


@dataclass
class Providers:
    proposer: object
    discoverer: object
    detector: object
    scorer: object
    chat: object = None  # optional client whose exchange log is copied into the trace


def _streams(seed: int) -> dict:
    names = ("gate", "detector", "scorer", "sim")
    return {n: int(s.generate_state(1)[0]) for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def make_providers(kind: str, sim: Simulator, config: AgentConfig) -> Providers:
    """Wire the mock (oracle + lexicon + table) or remote provider stack for one episode."""
    seeds = _streams(config.seed)
    if kind == "mock":
        from .perception import OracleDetector
        from .reasoning import CooccurrenceScorer, LexiconProposer, OracleDiscoverer, RandomScorer

        proposer = LexiconProposer(cot=not config.no_cot)
        scorer = RandomScorer(seeds["scorer"]) if config.scorer == "random" else CooccurrenceScorer()
        return Providers(proposer, OracleDiscoverer.for_simulator(sim, proposer),
                         OracleDetector.for_simulator(sim, seed=seeds["detector"]), scorer)
    if kind == "remote":
        from .perception import RemoteDetector
        from .reasoning import ChatClient, RandomScorer, RemoteDiscoverer, RemoteProposer, RemoteScorer

        chat = ChatClient(model=config.chat_model, temperature=config.temperature)
        scorer = RandomScorer(seeds["scorer"]) if config.scorer == "random" else RemoteScorer(chat)
        return Providers(RemoteProposer(chat, cot=not config.no_cot), RemoteDiscoverer(chat),
                         RemoteDetector(), scorer, chat)
    raise ValueError(f"unknown provider stack {kind!r}")


def update_objects(o_pro, o_dis, o_pri) -> list[ObjectLabel]:
    """Next step's prior objects: stable deduplicated union, prior first."""
    return dedup_labels(o_pri, o_pro, o_dis)


@dataclass
class Goal:
    kind: str = "none"  # exploit | frontier | none
    cell: GridIndex | None = None
    cells: np.ndarray | None = None  # planner seeds
    label: ObjectLabel | None = None

    def key(self):
        if self.kind == "none":
            return ("none",)
        return (self.kind, self.cell, None if self.label is None else self.label.key,
                None if self.cells is None else self.cells.tobytes())


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    path_length: float
    optimal_length: float
    spl: float
    failure_class: str | None
    stopped: bool
    final_pose: Pose
    trace: list[dict] = field(repr=False, default_factory=list)
    provider_error: str | None = None
    num_channels: int = 0
    channels_added: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.provider_error is None and self.optimal_length > 0

    def summary(self) -> dict:
        return {"success": self.success, "steps": self.steps, "path_length": self.path_length,
                "optimal_length": self.optimal_length, "spl": self.spl, "failure_class": self.failure_class,
                "stopped": self.stopped, "final_pose": self.final_pose.to_dict(),
                "provider_error": self.provider_error, "num_channels": self.num_channels,
                "channels_added": self.channels_added, "meta": self.meta}


def classify_failure(trace: list[dict], stopped: bool, window: int = 10, radius: float = 0.5) -> str:
    """Detection if the agent stopped in the wrong place; Collision if it ended wedged after
    `window` consecutive blocked moves; otherwise Exploration."""
    if stopped:
        return DETECTION
    steps = [r for r in trace if "action" in r]
    run = 0
    wedge = None
    for i, r in enumerate(steps):
        run = run + 1 if r.get("collided") else 0
        if run >= window:
            wedge = i - run + 1
    if wedge is not None:
        p0 = steps[wedge]["pose"]
        if all(math.hypot(r["pose"]["x"] - p0["x"], r["pose"]["y"] - p0["y"]) <= radius for r in steps[wedge:]):
            return COLLISION
    return EXPLORATION


def _labels_json(labels) -> list[str]:
    return [lab.phrase for lab in labels]


class Navigator:
    """One episode of the loop, advanced a step at a time.

    State is fully captured by `checkpoint()`, so a run can be stopped after any
    step and resumed bit-identically.
    """

    def __init__(self, scene: SceneSpec, instruction: Instruction | str, providers="mock",
                 config: AgentConfig | None = None, goal_labels=None, trace_path=None):
        self.cfg = config or AgentConfig()
        self.scene = scene
        self.instruction = instruction if isinstance(instruction, Instruction) else Instruction(instruction)
        self.goal_labels = list(goal_labels) if goal_labels else list(scene.goal_labels)
        seeds = _streams(self.cfg.seed)
        sim_cfg = self.cfg.sim_config()
        sim_cfg.seed = seeds["sim"]
        self.sim = Simulator(scene, sim_cfg)
        if isinstance(providers, str):
            providers = make_providers(providers, self.sim, self.cfg)
        elif callable(providers) and not isinstance(providers, Providers):
            providers = providers(self.sim, self.cfg)
        self.p = providers
        self.K = self.cfg.camera
        self.fcfg = self.cfg.frontier_config()
        self.rng = np.random.default_rng(seeds["gate"])
        self.map = VSSM(MapGeometry.centered(scene.start.xy, self.cfg.map_size_m, self.cfg.resolution),
                        fusion=self.cfg.fusion)
        self.trace: list[dict] = []
        self.trace_path = Path(trace_path) if trace_path else None
        if self.trace_path:
            self.trace_path.parent.mkdir(parents=True, exist_ok=True)
            self.trace_path.write_text("")
        self.t = 0
        self.done = False
        self.stopped = False
        self.path_length = 0.0
        self.provider_error = None
        self.o_pro: list[ObjectLabel] = []
        self.o_dis: list[ObjectLabel] = []
        self.o_pri = self.cfg.prior_labels
        self.thought = ""
        self.goal = Goal()
        self.field = None
        self.field_key = None
        self.field_t = -1
        self.blacklist = np.zeros(self.map.shape, dtype=bool)
        self.best_progress = (math.inf, 0)
        self.channels_added: list[str] = []
        self.obs = self.sim.observe()
        self._propose()

    # -- bookkeeping --------------------------------------------------------------------
    def _emit(self, rec: dict) -> None:
        self.trace.append(rec)
        if self.trace_path:
            with self.trace_path.open("a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    def _chat_log(self) -> list[dict]:
        chat = getattr(self.p, "chat", None)
        return chat.drain_log() if chat is not None else []

    def _propose(self) -> None:
        try:
            prop = self.p.proposer.propose(self.instruction)
        except ProviderError as e:
            self.provider_error = str(e)
            self.done = True
            self._emit({"event": "provider_error", "provider": "propose", "error": str(e),
                        "exchanges": self._chat_log()})
            return
        self.o_pro = list(prop.objects)
        self.thought = prop.thought
        self._emit({"event": "propose", "instruction": self.instruction.text, "objects": _labels_json(self.o_pro),
                    "thought": self.thought, "exchanges": self._chat_log()})

    def agent_cell(self) -> GridIndex:
        r, c = self.map.geom.world_to_cell(self.obs.pose.x, self.obs.pose.y)
        return GridIndex(int(r), int(c))

    # -- goal selection -----------------------------------------------------------------
    def _select_frontier(self, reason: str, rec: dict, prompt) -> None:
        cfg = self.cfg
        for _ in range(cfg.max_frontiers + 1):
            frontiers = [f for f in sample_frontiers(self.map, self.fcfg, self.agent_cell())
                         if not self.blacklist[f.cells[:, 0], f.cells[:, 1]].any()]
            if not frontiers:
                rec["no_frontiers"] = reason
                self.goal = Goal()
                return
            call = {"provider": "score", "reason": reason, "frontiers": [f.to_dict() for f in frontiers]}
            rec["calls"].append(call)
            if cfg.no_scoring:
                idx = self.p.scorer.choose_frontier(frontiers, self.o_pro, self.thought)
                call["mode"] = "choice"
            else:
                scores = self.p.scorer.score_frontiers(frontiers, prompt, self.thought, goals=self.o_pro)
                idx = pick_frontier(scores, frontiers)
                call["scores"] = scores.scores
            call["choice"] = idx
            call["exchanges"] = self._chat_log()
            f = frontiers[idx]
            self.goal = Goal("frontier", f.centroid, f.cells)
            self.best_progress = (math.inf, self.t)
            if self._ensure_field(force=True):
                return
            self.blacklist[f.cells[:, 0], f.cells[:, 1]] = True
            call["unreachable"] = True
            reason = "unreachable"
        self.goal = Goal()

    def _frontier_invalid(self) -> str | None:
        g = self.goal
        if g.kind != "frontier":
            return "no_goal" if g.kind == "none" else None
        if not frontier_alive(self.map, g.cells, self.fcfg):
            return "consumed"
        pose = self.obs.pose
        xs, ys = self.map.geom.cell_center(g.cells[:, 0], g.cells[:, 1])
        if float(np.min(np.hypot(xs - pose.x, ys - pose.y))) <= self.cfg.reach_radius:
            # standing on it without clearing it: the pocket cannot be observed from here
            self.blacklist[g.cells[:, 0], g.cells[:, 1]] = True
            return "reached"
        return None

    # -- planning -----------------------------------------------------------------------
    def _ensure_field(self, force: bool = False) -> bool:
        """Make sure a field toward the current goal exists and covers the agent. False if unreachable."""
        g = self.goal
        if g.kind == "none":
            self.field = None
            return False
        key = g.key()
        stale = (force or self.field is None or key != self.field_key
                 or self.t - self.field_t >= self.cfg.replan_interval)
        ac = self.agent_cell()
        if not stale and math.isfinite(self.field.value(ac.row, ac.col)):
            return True
        try:
            self.field = compute_field(self.map, g.cells, self.cfg.agent_radius, agent_cell=ac,
                                       inflation_margin=self.cfg.inflation_margin)
        except PlanningError:
            self.field = None
            return False
        self.field_key, self.field_t = key, self.t
        return math.isfinite(self.field.value(ac.row, ac.col))

    def _exploit_stop(self) -> bool:
        g = self.goal
        pose = self.obs.pose
        xs, ys = self.map.geom.cell_center(g.cells[:, 0], g.cells[:, 1])
        d = np.hypot(xs - pose.x, ys - pose.y)
        i = int(np.argmin(d))
        if d[i] > self.cfg.success_radius - self.cfg.stop_margin:
            return False
        return self._map_line_of_sight(tuple(g.cells[i]), g.cells)

    def _map_line_of_sight(self, target, own_cells) -> bool:
        geom = self.map.geom
        pose = self.obs.pose
        start = ((pose.x - geom.origin[0]) / geom.resolution, (pose.y - geom.origin[1]) / geom.resolution)
        own = {tuple(c) for c in own_cells.tolist()}
        for r, c in ray_cells(start, (target[0] + 0.5, target[1] + 0.5))[1:]:
            if (r, c) in own:
                return True
            if self.map.occupied[r, c] >= OCCUPIED_THRESHOLD:
                return False
        return True

    def _choose_action(self, rec: dict) -> Action:
        g = self.goal
        cfg = self.cfg
        fwd, turn = self.sim.config.forward_m, self.sim.config.turn_rad
        if g.kind == "exploit" and self._exploit_stop():
            return Action.STOP
        if g.kind == "none":
            return Action.TURN_LEFT
        if not self._ensure_field():
            if g.kind == "frontier":
                self.blacklist[g.cells[:, 0], g.cells[:, 1]] = True
            if g.kind == "frontier" and cfg.early_rescore:
                self._select_frontier("unreachable", rec, self._prompt)
                if self.goal.kind == "none" or not self._ensure_field():
                    return Action.TURN_LEFT
            else:
                return Action.TURN_LEFT
        try:
            if g.kind == "frontier" and best_heading(self.field, self.obs.pose, fwd, turn) is None:
                # at the bottom of the field but the frontier persists; move on
                self.blacklist[g.cells[:, 0], g.cells[:, 1]] = True
                if not cfg.early_rescore:
                    return Action.TURN_LEFT
                self._select_frontier("reached", rec, self._prompt)
                if self.goal.kind == "none" or not self._ensure_field():
                    return Action.TURN_LEFT
            return next_action(self.field, self.obs.pose, fwd, turn)
        except ReplanNeeded:
            return Action.TURN_LEFT

    # -- the loop -----------------------------------------------------------------------
    def step(self) -> bool:
        """Advance one time step. Returns True once the episode is over."""
        if self.done:
            return True
        cfg = self.cfg
        obs = self.obs
        t = self.t
        rec = {"t": t, "pose": obs.pose.to_dict(), "calls": []}

        if not cfg.no_discovery and should_discover(self.rng, cfg.sigma_freq):
            known = dedup_labels(self.o_pri, self.o_pro, self.o_dis)
            res = self.p.discoverer.discover(obs, self.instruction, known)
            self.o_dis = dedup_labels(self.o_dis, res.discovered)
            self.o_pro = dedup_labels(self.o_pro, res.promoted)
            rec["calls"].append({"provider": "discover", "discovered": _labels_json(res.discovered),
                                 "promoted": _labels_json(res.promoted), "exchanges": self._chat_log()})

        prompt = build_prompt(self.o_pro, self.o_dis, self.o_pri)
        self._prompt = prompt
        rec["prompt"] = prompt.rendered
        dets = []
        if prompt:
            dets = filter_by_confidence(self.p.detector.detect(obs, prompt), cfg.confidence_threshold)
            err = getattr(self.p.detector, "last_error", None)
            if err:
                rec["calls"].append({"provider": "detect", "error": err})
        n_before = self.map.num_channels
        self.map.update(dets, obs, self.K, cfg.max_range)
        new_channels = [lab.phrase for lab in self.map.labels[n_before:]]
        self.channels_added.extend(new_channels)
        rec["detections"] = [[d.label.phrase, round(d.confidence, 6)] for d in dets]
        if new_channels:
            rec["new_channels"] = new_channels

        hit = self.map.goal_component(self.o_pro, cfg.confidence_threshold)
        if hit is not None:
            label, comp, centroid = hit
            self.goal = Goal("exploit", centroid, np.argwhere(comp), label)
        else:
            if t % cfg.delta == 0:
                reason = "interval"
            elif not cfg.early_rescore:
                reason = None
            else:
                reason = self._frontier_invalid()
                if reason is None and self.goal.kind == "exploit":
                    reason = "lost_goal"
                if reason is None and self.goal.kind == "frontier":
                    reason = self._check_stuck()
            if reason is not None:
                self._select_frontier(reason, rec, prompt)
        self.o_pri = update_objects(self.o_pro, self.o_dis, self.o_pri)

        action = self._choose_action(rec)
        rec["goal_kind"] = self.goal.kind
        rec["goal_cell"] = None if self.goal.cell is None else [self.goal.cell.row, self.goal.cell.col]
        if self.goal.label is not None:
            rec["goal_label"] = self.goal.label.phrase
        rec["o_pro"] = _labels_json(self.o_pro)

        before = self.sim.pose
        out = self.sim.step(action)
        rec["action"] = action.value
        rec["collided"] = out.collided
        if action is Action.MOVE_FORWARD and not out.collided:
            self.path_length += math.hypot(out.observation.pose.x - before.x, out.observation.pose.y - before.y)
        if out.collided:
            handle_collision(self.map, before, action, True, self.sim.config.forward_m)
            self.field = None
        self.obs = out.observation
        self.t += 1
        if action is Action.STOP:
            self.stopped = True
        self.done = out.done
        self._emit(rec)
        return self.done

    def _check_stuck(self) -> str | None:
        if self.field is None:
            return None
        ac = self.agent_cell()
        v = self.field.value(ac.row, ac.col)
        best, since = self.best_progress
        if v < best - 0.25:
            self.best_progress = (v, self.t)
            return None
        if self.t - since >= self.cfg.stuck_patience:
            self.blacklist[self.goal.cells[:, 0], self.goal.cells[:, 1]] = True
            return "stuck"
        return None

    def run(self) -> EpisodeResult:
        while not self.done:
            self.step()
        return self.result()

    def result(self) -> EpisodeResult:
        cfg = self.cfg
        pose = self.obs.pose
        meta = {"instruction": self.instruction.text, "goal_labels": _labels_json(self.goal_labels),
                "seed": cfg.seed}
        if self.provider_error is not None:
            return EpisodeResult(False, self.t, self.path_length, 0.0, 0.0, None, False, pose, self.trace,
                                 self.provider_error, self.map.num_channels, self.channels_added, meta)
        opt = shortest_path_length(self.scene, self.scene.start, self.goal_labels, cfg.success_radius,
                                   cfg.agent_radius)
        success = self.stopped and is_success(self.scene, pose, cfg.success_radius, self.goal_labels)
        spl = spl_term(success, self.path_length, opt) if opt > 0 else 0.0
        failure = None if success else classify_failure(self.trace, self.stopped, cfg.collision_window)
        res = EpisodeResult(success, self.t, self.path_length, opt, spl, failure, self.stopped, pose,
                            self.trace, None, self.map.num_channels, self.channels_added, meta)
        end = {"event": "end", **res.summary()}
        if not self.trace or self.trace[-1].get("event") != "end":
            self._emit(end)
        return res

    # -- checkpointing ------------------------------------------------------------------
    def checkpoint(self) -> bytes:
        state = {
            "t": self.t, "done": self.done, "stopped": self.stopped, "path_length": self.path_length,
            "provider_error": self.provider_error, "o_pro": self.o_pro, "o_dis": self.o_dis,
            "o_pri": self.o_pri, "thought": self.thought, "goal": self.goal, "field": self.field,
            "field_key": self.field_key, "field_t": self.field_t, "blacklist": self.blacklist,
            "best_progress": self.best_progress, "channels_added": self.channels_added,
            "rng": self.rng.bit_generator.state, "map": serialize(self.map),
            "sim": {"pose": self.sim.pose, "steps": self.sim.steps, "done": self.sim.done,
                    "rng": self.sim.rng.bit_generator.state},
            "obs": self.obs, "trace": self.trace,
            "provider_rngs": {name: obj.rng.bit_generator.state
                              for name, obj in (("detector", self.p.detector), ("scorer", self.p.scorer))
                              if hasattr(obj, "rng")},
        }
        return pickle.dumps(state)

    def restore(self, blob: bytes) -> "Navigator":
        s = pickle.loads(blob)
        for k in ("t", "done", "stopped", "path_length", "provider_error", "o_pro", "o_dis", "o_pri",
                  "thought", "goal", "field", "field_key", "field_t", "blacklist", "best_progress",
                  "channels_added", "obs", "trace"):
            setattr(self, k, s[k])
        self.rng.bit_generator.state = s["rng"]
        self.map = deserialize(s["map"])
        self.sim.pose, self.sim.steps, self.sim.done = s["sim"]["pose"], s["sim"]["steps"], s["sim"]["done"]
        self.sim.rng.bit_generator.state = s["sim"]["rng"]
        for name, st in s["provider_rngs"].items():
            getattr(self.p, name).rng.bit_generator.state = st
        if self.trace_path:
            self.trace_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace))
        return self


def spl_term(success: bool, path_length: float, optimal_length: float) -> float:
    if optimal_length <= 0:
        raise ValueError("optimal path length must be positive")
    if not success:
        return 0.0
    return optimal_length / max(path_length, optimal_length)


def run_episode(scene: SceneSpec, instruction, providers="mock", config: AgentConfig | None = None,
                goal_labels=None, trace_path=None) -> EpisodeResult:
    return Navigator(scene, instruction, providers, config, goal_labels, trace_path).run()
