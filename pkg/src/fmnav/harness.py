"""Batch episode runner, SR/SPL aggregation, instruction tiers, config files and episode renders."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import traceback
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentConfig, EpisodeResult, Navigator, spl_term
from .core import Instruction, ObjectLabel
from .mapping import load_map, save_map
from .reasoning.mock import load_lexicon
from .scenegen import GeneratorParams, generate_scene
from .simulator import SceneSpec, shortest_path_length

log = logging.getLogger(__name__)

TIERS = ("bare", "attributed", "demand")
ERROR = "Error"

# demand sentences per goal category; the lexicon decides which objects satisfy them
DEMAND_SENTENCES = {
    "bed": "I am exhausted and need to lie down.",
    "couch": "I want to sit down for a while.",
    "chair": "I want to sit down for a while.",
    "tv": "I want to watch the news.",
    "toilet": "I need to use the bathroom.",
    "plant": "I want to water the plants.",
    "bathtub": "I would like to take a bath.",
    "refrigerator": "I am hungry, get me a snack.",
    "desk": "I need somewhere to work.",
    "sink": "I need to wash my hands.",
    "towel": "I need to dry my hands.",
    "painting": "I want to admire some art.",
}


# -- metrics ---------------------------------------------------------------------------


def compute_spl(results) -> float:
    """Mean SPL over valid episodes; failures contribute 0."""
    valid = [r for r in results if _valid(r)]
    if not valid:
        raise ValueError("no valid episodes to average")
    return float(np.mean([spl_term(_get(r, "success"), _get(r, "path_length"), _get(r, "optimal_length"))
                          for r in valid]))


def compute_sr(results) -> float:
    """Success rate over valid episodes, as a percentage."""
    valid = [r for r in results if _valid(r)]
    if not valid:
        raise ValueError("no valid episodes to average")
    return 100.0 * sum(bool(_get(r, "success")) for r in valid) / len(valid)


def _get(r, k):
    return r[k] if isinstance(r, dict) else getattr(r, k)


def _valid(r) -> bool:
    return _get(r, "provider_error") is None and _get(r, "optimal_length") > 0


# -- config ----------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, (tuple, set, frozenset)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def config_fingerprint(config: AgentConfig, providers: str = "mock", extra: dict | None = None) -> str:
    """sha256 over every setting that can change an episode."""
    payload = {"agent": config.to_dict(), "providers": providers, "extra": extra or {}}
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def default_config() -> dict:
    return {"agent": AgentConfig().to_dict(), "generator": GeneratorParams().to_dict()}


def load_config(path) -> tuple[AgentConfig, GeneratorParams]:
    """Read a JSON config with optional "agent" and "generator" sections; missing keys keep defaults."""
    d = json.loads(Path(path).read_text())
    if not isinstance(d, dict) or set(d) - {"agent", "generator"}:
        raise ValueError("config must be an object with 'agent' and/or 'generator' sections")
    agent = AgentConfig.from_dict({**AgentConfig().to_dict(), **d.get("agent", {})})
    gen = GeneratorParams.from_dict({**GeneratorParams().to_dict(), **d.get("generator", {})})
    return agent, gen


# -- episodes --------------------------------------------------------------------------


@dataclass
class EpisodeSpec:
    episode_id: str
    scene: SceneSpec
    instruction: str
    goal_labels: list[ObjectLabel]
    tier: str = "bare"
    seed: int = 0


def make_instruction(scene: SceneSpec, tier: str = "bare") -> tuple[str, list[ObjectLabel], str]:
    """(text, goal labels, tier actually used) for the scene's goal category.

    The attributed tier needs a goal instance with a colour; otherwise it falls
    back to bare. The demand tier's goals are every object the demand implies.
    """
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}")
    goal = scene.goal_labels[0]
    if tier == "attributed":
        if goal.attributes:
            return f"Find the {goal.phrase}.", [goal], "attributed"
        tier = "bare"
    if tier == "demand":
        sentence = DEMAND_SENTENCES.get(goal.name)
        if sentence is not None:
            objects = []
            for d, _ in load_lexicon().matched_demands(sentence):
                objects.extend(d.objects)
            if goal.name in objects:
                return sentence, [ObjectLabel(n) for n in dict.fromkeys(objects)], "demand"
        tier = "bare"
    return f"Find the {goal.name}.", [ObjectLabel(goal.name)], "bare"


def generated_episodes(count: int, seed: int = 0, params: GeneratorParams | None = None,
                       tiers=("bare",)) -> list[EpisodeSpec]:
    """Scenes `seed .. seed+count-1`, cycling through `tiers`."""
    if count < 1:
        raise ValueError("count must be positive")
    out = []
    for i in range(count):
        s = seed + i
        params_i = params
        want = tiers[i % len(tiers)]
        if want == "attributed":
            base = params or GeneratorParams()
            params_i = GeneratorParams.from_dict({**base.to_dict(), "attributed_goal_prob": 1.0})
        scene = generate_scene(s, params_i)
        text, goals, tier = make_instruction(scene, want)
        out.append(EpisodeSpec(f"ep{s:05d}", scene, text, goals, tier, s))
    return out


def episodes_from_dir(scenes_dir, tiers=("bare",)) -> list[EpisodeSpec]:
    from .simulator import load_scene

    paths = sorted(Path(scenes_dir).glob("*.json"))
    if not paths:
        raise ValueError(f"no scene files in {scenes_dir}")
    out = []
    for i, p in enumerate(paths):
        scene = load_scene(p)
        text, goals, tier = make_instruction(scene, tiers[i % len(tiers)])
        seed = int(scene.meta.get("seed", i))
        out.append(EpisodeSpec(p.stem, scene, text, goals, tier, seed))
    return out


@dataclass
class EpisodeRecord:
    """Flat per-episode summary kept in a report."""
    episode_id: str
    tier: str
    seed: int
    instruction: str
    success: bool
    steps: int
    path_length: float
    optimal_length: float
    spl: float
    failure_class: str | None
    provider_error: str | None = None
    error: str | None = None

    @classmethod
    def from_result(cls, spec: EpisodeSpec, r: EpisodeResult) -> "EpisodeRecord":
        return cls(spec.episode_id, spec.tier, spec.seed, spec.instruction, r.success, r.steps, r.path_length,
                   r.optimal_length, r.spl, r.failure_class, r.provider_error)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _episode_config(config: AgentConfig, seed: int) -> AgentConfig:
    return AgentConfig.from_dict({**config.to_dict(), "seed": seed})


def _optimal_or_nan(spec: EpisodeSpec, cfg: AgentConfig) -> float:
    try:
        return shortest_path_length(spec.scene, spec.scene.start, spec.goal_labels, cfg.success_radius,
                                    cfg.agent_radius)
    except Exception:
        return math.nan


def _run_one(job) -> EpisodeRecord:
    spec, providers, config, out_dir = job
    cfg = _episode_config(config, spec.seed)
    ep_dir = Path(out_dir) / spec.episode_id if out_dir else None
    try:
        nav = Navigator(spec.scene, Instruction(spec.instruction), providers, cfg, spec.goal_labels,
                        ep_dir / "trace.jsonl" if ep_dir else None)
        res = nav.run()
        rec = EpisodeRecord.from_result(spec, res)
        if ep_dir:
            save_map(nav.map, ep_dir / "map.vssm")
    except Exception as e:  # one bad episode must not sink the batch
        log.error("episode %s crashed: %s", spec.episode_id, e)
        rec = EpisodeRecord(spec.episode_id, spec.tier, spec.seed, spec.instruction, False, 0, 0.0,
                            _optimal_or_nan(spec, cfg), 0.0, ERROR,
                            error=f"{type(e).__name__}: {e}\n{traceback.format_exc(limit=5)}")
    if ep_dir:
        ep_dir.mkdir(parents=True, exist_ok=True)
        (ep_dir / "result.json").write_text(json.dumps(rec.to_dict(), indent=1, sort_keys=True))
    return rec


@dataclass
class BenchmarkReport:
    episodes: list[EpisodeRecord]
    sr: float
    spl: float
    failure_histogram: dict
    provider_failures: int
    fingerprint: str
    invalid: int = 0
    config: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_records(cls, records: list[EpisodeRecord], fingerprint: str = "", config=None) -> "BenchmarkReport":
        valid = [r for r in records if _valid(r)]
        provider = sum(r.provider_error is not None for r in records)
        hist = Counter(r.failure_class for r in valid if not r.success)
        sr = compute_sr(valid) if valid else 0.0
        spl = compute_spl(valid) if valid else 0.0
        return cls(records, sr, spl, dict(sorted(hist.items())), provider, fingerprint,
                   len(records) - len(valid) - provider, config or {})

    @property
    def successes(self) -> int:
        return sum(r.success for r in self.episodes if _valid(r))

    def to_dict(self) -> dict:
        return {"sr": self.sr, "spl": self.spl, "episodes": len(self.episodes), "successes": self.successes,
                "failure_histogram": self.failure_histogram, "provider_failures": self.provider_failures,
                "invalid": self.invalid, "fingerprint": self.fingerprint, "config": self.config,
                "per_episode": [r.to_dict() for r in self.episodes]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def by_tier(self) -> dict:
        out = {}
        for tier in sorted({r.tier for r in self.episodes}):
            rs = [r for r in self.episodes if r.tier == tier and _valid(r)]
            if rs:
                out[tier] = {"n": len(rs), "sr": compute_sr(rs), "spl": compute_spl(rs)}
        return out

    def table(self) -> str:
        head = f"{'episode':<10} {'tier':<10} {'ok':<3} {'steps':>5} {'path':>7} {'opt':>7} {'spl':>6}  failure"
        lines = [head, "-" * len(head)]
        for r in self.episodes:
            fail = r.failure_class or ("provider: " + r.provider_error if r.provider_error else "")
            lines.append(f"{r.episode_id:<10} {r.tier:<10} {'y' if r.success else 'n':<3} {r.steps:>5} "
                         f"{r.path_length:>7.2f} {r.optimal_length:>7.2f} {r.spl:>6.3f}  {fail}")
        lines.append("-" * len(head))
        lines.append(f"SR {self.sr:.1f}%  SPL {self.spl:.3f}  failures {self.failure_histogram}  "
                     f"provider failures {self.provider_failures}  fingerprint {self.fingerprint[:12]}")
        return "\n".join(lines)


def run_benchmark(episodes: list[EpisodeSpec], providers: str = "mock", config: AgentConfig | None = None,
                  parallelism: int = 1, out_dir=None) -> BenchmarkReport:
    """Run every episode and aggregate. Results are ordered as `episodes` whatever the parallelism."""
    if not episodes:
        raise ValueError("no episodes to run")
    config = config or AgentConfig()
    ids = [e.episode_id for e in episodes]
    if len(set(ids)) != len(ids):
        raise ValueError("episode ids must be unique")
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(e, providers, config, str(out_dir) if out_dir else None) for e in episodes]
    if parallelism <= 1:
        records = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(_run_one, jobs))
    extra = {"episodes": [[e.episode_id, e.seed, e.instruction, e.tier] for e in episodes]}
    report = BenchmarkReport.from_records(records, config_fingerprint(config, providers, extra),
                                          {"agent": config.to_dict(), "providers": providers})
    if out_dir:
        (Path(out_dir) / "report.json").write_text(report.to_json())
        (Path(out_dir) / "report.txt").write_text(report.table() + "\n")
    return report


# -- traces ----------------------------------------------------------------------------


def read_trace(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def metrics_from_traces(out_dir) -> tuple[float, float]:
    """(SR %, SPL) recomputed from each episode's final trace record."""
    ends = []
    for p in sorted(Path(out_dir).glob("*/trace.jsonl")):
        end = [r for r in read_trace(p) if r.get("event") == "end"]
        if end:
            ends.append(end[-1])
    return compute_sr(ends), compute_spl(ends)


def render_episode(trace_path, map_path, out_path) -> dict:
    """Top-down figure of one episode. Returns counts of what was drawn."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .mapping import composite_rgb

    trace_path, map_path = Path(trace_path), Path(map_path)
    for p in (trace_path, map_path):
        if not p.exists():
            raise FileNotFoundError(p)
    trace = read_trace(trace_path)
    vssm = load_map(map_path)
    geom = vssm.geom
    steps = [r for r in trace if "action" in r]

    def to_cell(pose):
        return ((pose["x"] - geom.origin[0]) / geom.resolution, (pose["y"] - geom.origin[1]) / geom.resolution)

    fig, ax = plt.subplots(figsize=(7, 7))
    ax.imshow(composite_rgb(vssm), origin="upper", interpolation="nearest")
    poses = [r["pose"] for r in steps]
    end = next((r for r in reversed(trace) if r.get("event") == "end"), None)
    if end is not None:
        poses.append(end["final_pose"])
    info = {"steps": len(steps), "reasoning_rounds": 0, "frontier_markers": 0, "goal": None, "stop": None}
    if poses:
        rc = np.array([to_cell(p) for p in poses])
        ax.plot(rc[:, 1], rc[:, 0], "-", color="tab:red", lw=1.2, label="trajectory")
        ax.plot(rc[0, 1], rc[0, 0], "o", color="tab:green", ms=7, label="start")
    rounds = 0
    for r in steps:
        for call in r["calls"]:
            if call.get("provider") != "score" or not call.get("frontiers"):
                continue
            rounds += 1
            scores = call.get("scores")
            for i, f in enumerate(call["frontiers"]):
                fr, fc = f["centroid"]
                ax.plot(fc, fr, "^", color="tab:orange", ms=5)
                text = f"{scores[i]:.2f}" if scores else ("*" if call.get("choice") == i else "")
                if text:
                    ax.annotate(text, (fc, fr), fontsize=6, xytext=(2, 2), textcoords="offset points")
                info["frontier_markers"] += 1
    info["reasoning_rounds"] = rounds
    exploit = [r for r in steps if r.get("goal_kind") == "exploit" and r.get("goal_cell")]
    if exploit:
        gr, gc = exploit[-1]["goal_cell"]
        ax.plot(gc, gr, "*", color="gold", mec="k", ms=16, label="goal")
        info["goal"] = [gr, gc]
    if steps and steps[-1]["action"] == "stop" and end is not None:
        sr_, sc_ = to_cell(end["final_pose"])
        ax.plot(sc_, sr_, "X", color="k", ms=10, label="stop")
        info["stop"] = [sr_, sc_]
    box = vssm.explored_bbox(margin=20)
    if box is not None:
        ax.set_ylim(box[1], box[0])
        ax.set_xlim(box[2], box[3])
    ax.set_xlabel("map column (y)")
    ax.set_ylabel("map row (x)")
    ax.legend(loc="lower right", fontsize=7)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    info["path"] = str(out_path)
    return info

