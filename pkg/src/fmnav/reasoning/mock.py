"""Deterministic stand-ins for the language-model roles, driven by shipped data tables."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from ..core import Instruction, ObjectLabel, dedup_labels
from . import DiscoveryResult, FrontierScores, Proposal, ProviderError

_ARTICLES = frozenset({"the", "a", "an", "my", "some", "your", "that", "this"})


def _data(name: str) -> dict:
    return json.loads(resources.files("fmnav.data").joinpath(name).read_text())


@dataclass(frozen=True)
class Demand:
    phrases: tuple[str, ...]
    objects: tuple[str, ...]
    satisfiers: tuple[str, ...]

    def matches(self, normalized_text: str) -> str | None:
        for p in self.phrases:
            if re.search(r"\b" + re.escape(p) + r"\b", normalized_text):
                return p
        return None


@dataclass(frozen=True)
class Lexicon:
    nouns: dict  # token tuple -> canonical name
    adjectives: frozenset
    relations: tuple  # token tuples, longest first
    demands: tuple[Demand, ...]
    version: int

    def match_noun(self, toks: list[str], i: int):
        for n in (3, 2, 1):
            key = tuple(toks[i:i + n])
            if len(key) == n and key in self.nouns:
                return self.nouns[key], n
        return None, 0

    def match_relation(self, toks: list[str], i: int):
        for rel in self.relations:
            if tuple(toks[i:i + len(rel)]) == rel:
                return rel
        return None

    def matched_demands(self, text: str):
        low = " ".join(re.findall(r"[a-z']+", text.lower()))
        out = []
        for d in self.demands:
            hit = d.matches(low)
            if hit:
                out.append((d, hit))
        return out


@lru_cache(maxsize=None)
def load_lexicon() -> Lexicon:
    d = _data("lexicon.json")
    nouns = {tuple(n.split()): n for n in d["nouns"]}
    nouns.update({tuple(k.split()): v for k, v in d["synonyms"].items()})
    rels = tuple(sorted((tuple(r.split()) for r in d["relations"]), key=len, reverse=True))
    demands = tuple(Demand(tuple(dm["phrases"]), tuple(dm["objects"]), tuple(dm.get("satisfiers", ())))
                    for dm in d["demands"])
    return Lexicon(nouns, frozenset(d["adjectives"]), rels, demands, int(d["version"]))


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z]+", text.lower().replace("'", ""))


class LexiconProposer:
    """Keyword proposer: named objects (with adjectives and trailing modifiers) plus demand lookups."""

    def __init__(self, lexicon: Lexicon | None = None, cot: bool = True):
        self.lexicon = lexicon or load_lexicon()
        self.cot = cot

    def _modifier(self, toks, k, consumed):
        """Parse "with the blue mattress" / "next to the window" starting at k."""
        lex = self.lexicon
        if k < len(toks) and toks[k] == "with":
            j = k + 1
            while j < len(toks) and toks[j] in _ARTICLES:
                j += 1
            words = []
            while j < len(toks) and toks[j] in lex.adjectives:
                words.append(toks[j])
                j += 1
            name, n = lex.match_noun(toks, j)
            if name is None:
                return None, k
            consumed.update(range(k, j + n))
            return " ".join(words + [name]), j + n
        rel = lex.match_relation(toks, k)
        if rel is not None:
            j = k + len(rel)
            while j < len(toks) and toks[j] in _ARTICLES:
                j += 1
            name, n = lex.match_noun(toks, j)
            if name is None:
                return None, k
            consumed.update(range(k, j + n))
            return " ".join(rel) + " " + name, j + n
        return None, k

    def parse_objects(self, text: str) -> list[ObjectLabel]:
        lex = self.lexicon
        toks = _tokens(text)
        consumed: set[int] = set()
        found = []
        i = 0
        while i < len(toks):
            if i in consumed:
                i += 1
                continue
            name, n = lex.match_noun(toks, i)
            if name is None:
                i += 1
                continue
            attrs = []
            j = i - 1
            while j >= 0 and j not in consumed and toks[j] in lex.adjectives:
                attrs.insert(0, toks[j])
                j -= 1
            consumed.update(range(j + 1, i + n))
            k = i + n
            while True:
                mod, k2 = self._modifier(toks, k, consumed)
                if mod is None:
                    break
                attrs.append(mod)
                k = k2
            found.append(ObjectLabel(name, tuple(attrs)))
            i = k
        return found

    def satisfiers(self, instruction: Instruction) -> set[str]:
        names = {lab.name for lab in self.parse_objects(instruction.text)}
        for d, _ in self.lexicon.matched_demands(instruction.text):
            names.update(d.objects)
            names.update(d.satisfiers)
        return names

    def propose(self, instruction: Instruction) -> Proposal:
        text = instruction.text
        named = self.parse_objects(text)
        demands = self.lexicon.matched_demands(text)
        implied = [ObjectLabel(o) for d, _ in demands for o in d.objects]
        objects = dedup_labels(named, implied)
        if not objects:
            m = re.search(r"\b(?:find|locate|look for|go to|where is)\s+(?:the\s+|a\s+|an\s+|my\s+)?"
                          r"([a-z][a-z ]*?)\s*[.!?]*$", text.lower())
            if m:
                objects = [ObjectLabel(m.group(1))]
        if not objects:
            raise ProviderError(f"no objects could be proposed for {text!r}")
        thought = ""
        if self.cot:
            parts = []
            if named:
                parts.append("The instruction names " + ", ".join(lab.phrase for lab in named) + " directly.")
            for d, phrase in demands:
                parts.append(f"\"{phrase}\" suggests looking for {', '.join(d.objects)}.")
            parts.append("Candidate goal objects: " + ", ".join(lab.phrase for lab in objects) + ".")
            thought = " ".join(parts)
        return Proposal(objects, thought)


class OracleDiscoverer:
    """Reports visible scene objects the agent does not know yet.

    `visible` maps a pose to (ObjectLabel, pixel mask) pairs, e.g. simulator ground truth.
    Discoveries that satisfy the instruction per the lexicon are promoted to goals.
    """

    def __init__(self, visible, proposer: LexiconProposer | None = None):
        self.visible = visible
        self.proposer = proposer or LexiconProposer()

    @classmethod
    def for_simulator(cls, sim, proposer: LexiconProposer | None = None) -> "OracleDiscoverer":
        scene = sim.scene
        return cls(lambda pose: [(scene.objects[k].label, m) for k, m in sim.visible_objects(pose)], proposer)

    def discover(self, obs, instruction: Instruction, known) -> DiscoveryResult:
        known_names = {lab.name for lab in known}
        new = dedup_labels([ObjectLabel(lab.name) for lab, _ in self.visible(obs.pose)
                            if lab.name not in known_names])
        wanted = self.proposer.satisfiers(instruction)
        return DiscoveryResult(new, [lab for lab in new if lab.name in wanted])


@dataclass(frozen=True)
class CooccurTable:
    pairs: dict
    default: float
    nothing: float
    self_score: float
    version: int

    def __call__(self, a: str, b: str) -> float:
        if a == b:
            return self.self_score
        return self.pairs.get((a, b), self.default)


@lru_cache(maxsize=None)
def cooccur_table() -> CooccurTable:
    d = _data("cooccurrence.json")
    pairs = {}
    for a, b, v in d["pairs"]:
        pairs[(a, b)] = pairs[(b, a)] = float(v)
    return CooccurTable(pairs, float(d["default"]), float(d["nothing_recognizable"]), float(d["self"]),
                        int(d["version"]))


class CooccurrenceScorer:
    """Rates a frontier by how strongly its nearby objects co-occur with any goal."""

    def __init__(self, table: CooccurTable | None = None):
        self.table = table or cooccur_table()

    def score_one(self, nearby, goals) -> float:
        if not nearby:
            return self.table.nothing
        if not goals:
            return self.table.default
        return max(self.table(g.name, o.name) for g in goals for o, _ in nearby)

    def score_frontiers(self, frontiers, prompt=None, thought: str = "", goals=()) -> FrontierScores:
        if not frontiers:
            raise ValueError("no frontiers to score")
        return FrontierScores([self.score_one(f.nearby_objects, goals) for f in frontiers])

    def choose_frontier(self, frontiers, goals, thought: str = "") -> int:
        """Single-choice mode: a frontier that shows a goal outright, else the largest one."""
        names = {g.name for g in goals}
        for i, f in enumerate(frontiers):
            if any(o.name in names for o, _ in f.nearby_objects):
                return i
        return 0


class RandomScorer:
    """Uniform-random frontier rating: the blind-exploration baseline."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def score_frontiers(self, frontiers, prompt=None, thought: str = "", goals=()) -> FrontierScores:
        if not frontiers:
            raise ValueError("no frontiers to score")
        return FrontierScores(self.rng.random(len(frontiers)).tolist())

    def choose_frontier(self, frontiers, goals, thought: str = "") -> int:
        return int(self.rng.integers(len(frontiers)))
