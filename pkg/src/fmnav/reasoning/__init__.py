"""Language-model roles: object proposal, discovery, and frontier rating."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..core import Instruction, ObjectLabel


class ProviderError(RuntimeError):
    """A provider could not produce a usable answer after its retries."""


@dataclass
class Proposal:
    objects: list[ObjectLabel]
    thought: str = ""


@dataclass
class DiscoveryResult:
    discovered: list[ObjectLabel] = field(default_factory=list)
    promoted: list[ObjectLabel] = field(default_factory=list)


@dataclass
class FrontierScores:
    scores: list[float]

    def __post_init__(self):
        self.scores = [float(s) for s in self.scores]
        if any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise ValueError("frontier scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.scores)


class Proposer(Protocol):
    def propose(self, instruction: Instruction) -> Proposal: ...


class Discoverer(Protocol):
    def discover(self, obs, instruction: Instruction, known) -> DiscoveryResult: ...


class Scorer(Protocol):
    def score_frontiers(self, frontiers, prompt, thought: str, goals=()) -> FrontierScores: ...

    def choose_frontier(self, frontiers, goals, thought: str) -> int: ...


def should_discover(rng: np.random.Generator, sigma_freq: float) -> bool:
    if not 0.0 <= sigma_freq <= 1.0:
        raise ValueError("sigma_freq must be a probability")
    # always consume one draw so the stream does not depend on sigma_freq edge cases
    return bool(rng.random() < sigma_freq)


def pick_frontier(scores: FrontierScores, frontiers) -> int:
    """Index of the best frontier: highest score, then larger size, then lower index."""
    if not frontiers or len(scores) != len(frontiers):
        raise ValueError("scores and frontiers must be aligned and non-empty")
    return min(range(len(frontiers)), key=lambda i: (-scores.scores[i], -frontiers[i].size, i))


from .mock import (CooccurrenceScorer, LexiconProposer, OracleDiscoverer,  # noqa: E402
                   RandomScorer, cooccur_table, load_lexicon)
from .remote import ChatClient, RemoteDiscoverer, RemoteProposer, RemoteScorer  # noqa: E402

__all__ = [
    "ChatClient", "CooccurrenceScorer", "DiscoveryResult", "Discoverer", "FrontierScores",
    "LexiconProposer", "OracleDiscoverer", "Proposal", "Proposer", "ProviderError", "RandomScorer",
    "RemoteDiscoverer", "RemoteProposer", "RemoteScorer", "Scorer", "cooccur_table", "load_lexicon",
    "pick_frontier", "should_discover",
]
