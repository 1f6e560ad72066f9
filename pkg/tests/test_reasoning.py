import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmnav.core import GridIndex, Instruction, ObjectLabel, Pose
from fmnav.frontier import Frontier
from fmnav.reasoning import (ChatClient, CooccurrenceScorer, FrontierScores, LexiconProposer, OracleDiscoverer,
                             ProviderError, RandomScorer, RemoteDiscoverer, RemoteProposer, RemoteScorer,
                             cooccur_table, pick_frontier, should_discover)
from fmnav.reasoning.remote import parse_final_block
from fmnav.simulator import Observation

from .test_perception import FakeResponse, FakeSession

L = ObjectLabel
I = Instruction


def frontier(nearby=(), size=5):
    return Frontier(GridIndex(0, 0), np.zeros((size, 2), dtype=int), [(L(n), s) for n, s in nearby])


def test_propose_attributed_bed():
    p = LexiconProposer().propose(I("Find the bed with the blue mattress next to the window."))
    bed = [o for o in p.objects if o.name == "bed"]
    assert bed and {"blue mattress", "next to window"} <= set(bed[0].attributes)


def test_propose_demand_and_direct():
    lex = LexiconProposer()
    assert "bed" in {o.name for o in lex.propose(I("I'm exhausted. I need to lie down and rest.")).objects}
    p = lex.propose(I("Find the bed."))
    assert p.objects == [L("bed")] and p.thought
    q = LexiconProposer(cot=False).propose(I("Find the bed."))
    assert q.objects == [L("bed")] and q.thought == ""


def test_propose_is_deterministic():
    text = I("I want to water the plants and then watch the news.")
    assert LexiconProposer().propose(text) == LexiconProposer().propose(text)


def test_discovery_promotes_tap():
    seen = [(L("chair"), None), (L("tap"), None)]
    d = OracleDiscoverer(lambda pose: seen).discover(Observation(np.ones((2, 2)), Pose(0, 0)),
                                                      I("I want to wash my hands."), [L("chair")])
    assert L("tap") in d.discovered and L("tap") in d.promoted and L("chair") not in d.discovered
    assert set(d.promoted) <= set(d.discovered) | {L("chair")}


@pytest.mark.parametrize("seen", [[(L("chair"), None)], []])
def test_discovery_nothing_new(seen):
    d = OracleDiscoverer(lambda pose: seen).discover(Observation(np.ones((2, 2)), Pose(0, 0)),
                                                      I("Find the chair."), [L("chair")])
    assert d.discovered == [] and d.promoted == []


def test_should_discover_edges_and_rate():
    rng = np.random.default_rng(0)
    assert not any(should_discover(rng, 0.0) for _ in range(1000))
    assert all(should_discover(rng, 1.0) for _ in range(1000))
    rng = np.random.default_rng(123)
    freq = np.mean([should_discover(rng, 0.01) for _ in range(100_000)])
    assert abs(freq - 0.01) <= 0.002
    with pytest.raises(ValueError):
        should_discover(rng, 1.5)


def test_cooccurrence_scores():
    s = CooccurrenceScorer()
    fs = [frontier([("bathtub", 0.9)]), frontier([("couch", 0.9)]), frontier()]
    sc = s.score_frontiers(fs, goals=[L("toilet")]).scores
    assert sc[0] == 0.9 and sc[0] > sc[1] and sc[2] == cooccur_table().nothing == 0.05
    assert cooccur_table()("bed", "tv") == 0.4 and cooccur_table()("zebra", "kettle") == 0.1
    assert pick_frontier(s.score_frontiers(fs[:1], goals=[L("toilet")]), fs[:1]) == 0


def test_random_scorer_in_range_and_seeded():
    fs = [frontier() for _ in range(6)]
    a = RandomScorer(5).score_frontiers(fs).scores
    assert a == RandomScorer(5).score_frontiers(fs).scores and all(0 <= v <= 1 for v in a)


def test_pick_frontier_ties():
    fs = [frontier(size=5), frontier(size=5), frontier(size=5)]
    assert pick_frontier(FrontierScores([0.2, 0.9, 0.5]), fs) == 1
    assert pick_frontier(FrontierScores([0.7, 0.7]), [frontier(size=5), frontier(size=12)]) == 1
    assert pick_frontier(FrontierScores([0.3] * 3), [frontier(size=6), frontier(size=9), frontier(size=9)]) == 1
    with pytest.raises(ValueError):
        FrontierScores([1.2])


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(5, 30)), min_size=1, max_size=8))
@settings(max_examples=100, deadline=None)
def test_pick_frontier_argmax_invariance(items):
    fs = [frontier(size=n) for _, n in items]
    raw = [s for s, _ in items]
    k = pick_frontier(FrontierScores(raw), fs)
    squashed = [s * s * 0.5 + 0.1 for s in raw]  # strictly increasing on [0, 1]
    assert pick_frontier(FrontierScores(squashed), fs) == k


# -- remote --------------------------------------------------------------------------------


def reply(obj, before="Because reasons."):
    return FakeResponse({"content": f"{before}\n```json\n{json.dumps(obj)}\n```"})


def client(*responses, **kw):
    return ChatClient("http://chat.invalid/v1", model="m", api_key="sk-secretsecret123", session=FakeSession(*responses),
                      **kw)


def test_parse_final_block_uses_last():
    data, before = parse_final_block('a\n```json\n{"x": 1}\n```\nb\n```\n{"x": 2}\n```')
    assert data == {"x": 2} and before.startswith("a")
    with pytest.raises(ValueError):
        parse_final_block("no block here")


def test_remote_propose_with_retry_and_redaction():
    c = client(FakeResponse({"content": "garbage"}), reply({"objects": [{"name": "bed", "attributes": ["blue"]}]}))
    p = RemoteProposer(c).propose(I("Find the blue bed. key sk-secretsecret123"))
    assert p.objects == [L("bed", ("blue",))] and p.thought == "Because reasons."
    req = c.session.requests[0]
    assert req["json"]["temperature"] == 0.0 and req["json"]["model"] == "m"
    assert req["headers"]["Authorization"] == "Bearer sk-secretsecret123"
    log = c.drain_log()
    assert [r["attempt"] for r in log] == [0, 1] and "error" in log[0]
    assert "sk-secretsecret123" not in json.dumps(log)


def test_remote_propose_gives_up():
    c = client(*[FakeResponse({"content": "nope"})] * 3)
    with pytest.raises(ProviderError):
        RemoteProposer(c).propose(I("Find the bed."))
    assert len(c.session.requests) == 3


def test_remote_scores_clamped_and_fallback():
    fs = [frontier(), frontier()]
    assert RemoteScorer(client(reply({"scores": [1.7, -0.2]}))).score_frontiers(fs, goals=[L("bed")]).scores == [1, 0]
    bad = client(*[reply({"scores": [0.1]})] * 3)
    assert RemoteScorer(bad).score_frontiers(fs, goals=[L("bed")]).scores == [0.5, 0.5]


def test_remote_score_prompt_contains_summaries_and_thought():
    c = client(reply({"scores": [0.3]}))
    RemoteScorer(c).score_frontiers([frontier([("bathtub", 0.8)])], thought="toilets sit by baths", goals=[L("toilet")])
    body = c.session.requests[0]["json"]["messages"][-1]["content"]
    assert "toilets sit by baths" in body and "This area contains bathtub." in body and "toilet" in body


def test_remote_discovery_is_best_effort():
    obs = Observation(np.ones((4, 4)), Pose(0, 0))
    ok = RemoteDiscoverer(client(reply({"discovered": ["tap"], "promoted": ["tap", "unicorn"]})))
    d = ok.discover(obs, I("I want to wash my hands."), [L("chair")])
    assert d.discovered == [L("tap")] and d.promoted == [L("tap")]
    bad = RemoteDiscoverer(client(*[ConnectionError("down")] * 3))
    assert bad.discover(obs, I("x y"), []).discovered == []
