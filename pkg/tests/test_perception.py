import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmnav.core import CameraIntrinsics, ObjectLabel, Pose
from fmnav.perception import (Detection, ObjectPrompt, OracleDetector, OracleNoise, RemoteDetector, build_prompt,
                              filter_by_confidence, rle_decode, rle_encode)
from fmnav.simulator import Observation, SimConfig, Simulator, ground_truth_masks

from .conftest import block, make_scene

L = ObjectLabel


def _mask(shape=(4, 5), cells=((1, 1),)):
    m = np.zeros(shape, dtype=bool)
    for r, c in cells:
        m[r, c] = True
    return m


def _obs(shape=(4, 5)):
    return Observation(np.ones(shape), Pose(0, 0))


def test_prompt_renders_prior_list():
    prior = [L(n) for n in ("chair", "bed", "plant", "toilet", "tv", "couch")]
    assert build_prompt(prior, [], []).rendered == "chair.bed.plant.toilet.tv.couch"


def test_empty_prompt_is_falsy():
    p = build_prompt([], [], [])
    assert not p and p.rendered == ""


def test_prompt_dedups_and_orders_prior_first():
    assert build_prompt([L("bed")], [L("bed")], [L("bed")]).rendered == "bed"
    p = build_prompt([L("chair", ("red",))], [L("tap")], [L("bed")])
    assert p.rendered == "bed.red chair.tap"
    assert p.lookup("Red  Chair") == L("chair", ("red",))


def test_detection_invariants():
    with pytest.raises(ValueError):
        Detection(L("bed"), 1.2, _mask())
    with pytest.raises(ValueError):
        Detection(L("bed"), 0.5, np.zeros((3, 3), bool))


def test_filter_by_confidence():
    dets = [Detection(L("bed"), 0.9, _mask()), Detection(L("chair"), 0.5, _mask())]
    assert [d.label.name for d in filter_by_confidence(dets, 0.55)] == ["bed"]
    assert filter_by_confidence([], 0.55) == []
    assert filter_by_confidence(dets[1:], 0.55) == []


def test_oracle_passes_ground_truth_through():
    m = _mask()
    det = OracleDetector(lambda pose: [(L("bed"), m)])
    out = det.detect(_obs(), build_prompt([L("bed")]))
    assert len(out) == 1 and out[0].confidence == 0.9 and out[0].mask is m


def test_oracle_attribute_gate():
    det = OracleDetector(lambda pose: [(L("chair", ("blue",)), _mask())])
    assert det.detect(_obs(), build_prompt([L("chair", ("red",))])) == []
    assert len(det.detect(_obs(), build_prompt([L("chair", ("blue",))]))) == 1
    assert len(det.detect(_obs(), build_prompt([L("chair")]))) == 1


def test_oracle_rejects_empty_prompt():
    with pytest.raises(ValueError):
        OracleDetector(lambda pose: []).detect(_obs(), ObjectPrompt(()))


def test_noisy_false_negatives_monte_carlo():
    det = OracleDetector(lambda pose: [(L("bed"), _mask())], OracleNoise(false_negative=0.2), seed=7)
    prompt = build_prompt([L("bed")])
    hits = sum(len(det.detect(_obs(), prompt)) for _ in range(1000))
    assert abs(hits / 1000 - 0.8) <= 0.03


def test_noisy_oracle_is_reproducible():
    noise = OracleNoise(beta=(5.0, 2.0), false_negative=0.1, confusion={"bed": {"couch": 0.3}})
    prompt = build_prompt([L("bed"), L("couch")])

    def run():
        det = OracleDetector(lambda pose: [(L("bed"), _mask())], noise, seed=3)
        return [[(d.label.phrase, d.confidence) for d in det.detect(_obs(), prompt)] for _ in range(50)]

    a, b = run(), run()
    assert a == b
    names = {n for step in a for n, _ in step}
    assert names <= {"bed", "couch"} and "couch" in names


def test_oracle_is_exhaustive_against_ground_truth():
    scene = make_scene(objects=[("bed", block(60, 80, 40, 60), 0.6), ("chair", block(60, 70, 70, 80), 0.9),
                                ("plant", block(20, 25, 80, 85), 1.0)], start=(1.0, 2.5), yaw=0.0)
    K = CameraIntrinsics.from_hfov(64, 48)
    sim = Simulator(scene, SimConfig(camera=K))
    prompt = build_prompt([L("bed"), L("chair"), L("plant"), L("tv")])
    dets = OracleDetector.for_simulator(sim).detect(sim.observe(), prompt)
    gt = ground_truth_masks(scene, scene.start, K)
    assert len(dets) == len(gt) >= 2
    for d, (lab, m) in zip(dets, gt):
        assert d.label == lab and np.array_equal(d.mask, m)
        assert d.label.phrase in prompt.rendered.split(".")


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_rle_roundtrip(h, w, seed):
    m = np.random.default_rng(seed).random((h, w)) < 0.4
    enc = rle_encode(m)
    assert enc["size"] == [h, w] and sum(enc["counts"]) == h * w
    assert np.array_equal(rle_decode(enc), m)


def test_rle_rejects_bad_counts():
    with pytest.raises(ValueError):
        rle_decode({"size": [2, 2], "counts": [1, 1]})


class FakeResponse:
    def __init__(self, body, status=200):
        self.body, self.status = body, status

    def raise_for_status(self):
        if self.status >= 400:
            raise RuntimeError(f"HTTP {self.status}")

    def json(self):
        if isinstance(self.body, Exception):
            raise self.body
        return self.body


class FakeSession:
    def __init__(self, *responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        r = self.responses.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_remote_detector_roundtrip():
    m = _mask((4, 5), ((0, 0), (3, 4)))
    body = {"detections": [{"label": "bed", "confidence": 0.8, "rle_mask": rle_encode(m)},
                           {"label": "unicorn", "confidence": 0.99, "rle_mask": rle_encode(m)}]}
    sess = FakeSession(FakeResponse(body))
    det = RemoteDetector("http://detector.invalid/detect", session=sess)
    out = det.detect(_obs((4, 5)), build_prompt([L("bed"), L("chair")]))
    assert [(d.label.name, d.confidence) for d in out] == [("bed", 0.8)]
    assert np.array_equal(out[0].mask, m)
    req = sess.requests[0]["json"]
    assert req["prompt"] == "bed.chair" and set(req) == {"image", "prompt", "box_threshold"}
    json.dumps(req)


@pytest.mark.parametrize("resp", [
    ConnectionError("refused"),
    FakeResponse({}, 500),
    FakeResponse(ValueError("not json")),
    FakeResponse({"detections": [{"label": "bed"}]}),
    FakeResponse({"detections": [{"label": "bed", "confidence": 0.9, "rle_mask": {"size": [9, 9], "counts": [81]}}]}),
])
def test_remote_detector_failures_mean_no_detections(resp):
    det = RemoteDetector("http://detector.invalid/detect", session=FakeSession(resp))
    assert det.detect(_obs((4, 5)), build_prompt([L("bed")])) == []
    assert det.last_error


def test_remote_detector_reads_env(monkeypatch):
    monkeypatch.setenv("FMNAV_DETECT_URL", "http://env.invalid/x")
    monkeypatch.setenv("FMNAV_DETECT_TIMEOUT", "3.5")
    det = RemoteDetector()
    assert det.url == "http://env.invalid/x" and det.timeout == 3.5
