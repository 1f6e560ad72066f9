"""Open-vocabulary detection providers: simulator oracle (optionally noisy) and a remote endpoint."""
from __future__ import annotations

import base64
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .core import PROMPT_SEPARATOR, ObjectLabel, dedup_labels

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Detection:
    label: ObjectLabel
    confidence: float
    mask: np.ndarray  # (H, W) bool pixel mask

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not self.mask.any():
            raise ValueError("detection mask is empty")


@dataclass(frozen=True)
class ObjectPrompt:
    labels: tuple[ObjectLabel, ...]

    @property
    def rendered(self) -> str:
        return PROMPT_SEPARATOR.join(lab.phrase for lab in self.labels)

    def __bool__(self) -> bool:
        return bool(self.labels)

    def lookup(self, phrase: str) -> ObjectLabel | None:
        phrase = " ".join(phrase.lower().split())
        for lab in self.labels:
            if lab.phrase == phrase:
                return lab
        return None


def build_prompt(proposed=(), discovered=(), prior=()) -> ObjectPrompt:
    """Dot-joined prompt: prior objects first, then proposals, then discoveries, deduplicated."""
    labels = dedup_labels(prior, proposed, discovered)
    # two different labels can still render to the same phrase (attribute order)
    seen, out = set(), []
    for lab in labels:
        if lab.phrase not in seen:
            seen.add(lab.phrase)
            out.append(lab)
    return ObjectPrompt(tuple(out))


def filter_by_confidence(dets, threshold: float) -> list[Detection]:
    return [d for d in dets if d.confidence >= threshold]


# -- oracle ----------------------------------------------------------------------------


@dataclass
class OracleNoise:
    """Noisy-oracle model. ``beta`` = (a, b) for Beta confidences; None keeps `confidence`."""
    confidence: float = 0.9
    beta: tuple[float, float] | None = None
    false_negative: float = 0.0
    confusion: dict[str, dict[str, float]] = field(default_factory=dict)


class OracleDetector:
    """Returns ground-truth masks of visible objects named in the prompt.

    `visible` is a callable pose -> list of (ObjectLabel, pixel mask), typically
    bound to the simulator's ground truth for the current episode.
    """

    def __init__(self, visible, noise: OracleNoise | None = None, seed: int = 0):
        self.visible = visible
        self.noise = noise or OracleNoise()
        self.rng = np.random.default_rng(seed)

    @classmethod
    def for_simulator(cls, sim, noise: OracleNoise | None = None, seed: int = 0) -> "OracleDetector":
        scene = sim.scene
        return cls(lambda pose: [(scene.objects[k].label, m) for k, m in sim.visible_objects(pose)],
                   noise, seed)

    def _confidence(self) -> float:
        nz = self.noise
        if nz.beta is None:
            return float(nz.confidence)
        return float(self.rng.beta(*nz.beta))

    def _confuse(self, label: ObjectLabel, prompt: ObjectPrompt) -> ObjectLabel:
        table = self.noise.confusion.get(label.name)
        if not table:
            return label
        u = self.rng.random()
        acc = 0.0
        for other, p in sorted(table.items()):
            acc += p
            if u < acc:
                # confusions must still name something the prompt asked for
                return prompt.lookup(other) or label
        return label

    def detect(self, obs, prompt: ObjectPrompt) -> list[Detection]:
        if not prompt:
            raise ValueError("empty prompt")
        noisy = self.noise.beta is not None or self.noise.false_negative > 0 or self.noise.confusion
        out = []
        for inst_label, mask in self.visible(obs.pose):
            for lab in prompt.labels:
                if not lab.matches(inst_label):
                    continue
                if noisy and self.noise.false_negative > 0 and self.rng.random() < self.noise.false_negative:
                    continue
                emitted = self._confuse(lab, prompt) if noisy else lab
                out.append(Detection(emitted, self._confidence(), mask))
        return out


# -- remote ----------------------------------------------------------------------------


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run lengths, alternating false/true, starting with a (possibly 0) false run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": list(mask.shape), "counts": counts}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = (int(v) for v in rle["size"])
    counts = [int(c) for c in rle["counts"]]
    if any(c < 0 for c in counts) or sum(counts) != h * w:
        raise ValueError("run lengths do not cover the image")
    vals = np.arange(len(counts)) % 2 == 1
    return np.repeat(vals, counts).reshape(h, w)


def depth_preview_png(depth: np.ndarray, max_range: float = 10.0) -> bytes:
    """Grayscale PNG stand-in for RGB when the observation carries none."""
    import matplotlib.image as mpimg

    d = np.where(np.isfinite(depth), depth, max_range)
    img = 1.0 - np.clip(d / max_range, 0.0, 1.0)
    buf = io.BytesIO()
    mpimg.imsave(buf, img, cmap="gray", vmin=0.0, vmax=1.0, format="png")
    return buf.getvalue()


class DetectionFailure(RuntimeError):
    pass


class RemoteDetector:
    """Client for an HTTP detection service.

    Request: ``{image, prompt, box_threshold}``; response:
    ``{detections: [{label, confidence, rle_mask}]}``. Any transport or schema
    failure yields no detections for that step; the reason is kept in `last_error`.
    """

    def __init__(self, url: str | None = None, box_threshold: float = 0.35, timeout: float = 30.0,
                 session=None):
        self.url = url or os.environ.get("FMNAV_DETECT_URL", "")
        self.box_threshold = box_threshold
        self.timeout = float(os.environ.get("FMNAV_DETECT_TIMEOUT", timeout))
        self.session = session
        self.last_error: str | None = None
        self.calls = 0

    def _post(self, payload: dict) -> dict:
        import requests

        poster = self.session or requests
        resp = poster.post(self.url, json=payload, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()

    def parse(self, body, prompt: ObjectPrompt, shape) -> list[Detection]:
        if not isinstance(body, dict) or not isinstance(body.get("detections"), list):
            raise DetectionFailure("response lacks a detections list")
        out = []
        for item in body["detections"]:
            try:
                lab = prompt.lookup(str(item["label"]))
                conf = float(item["confidence"])
                mask = rle_decode(item["rle_mask"])
            except (KeyError, TypeError, ValueError) as e:
                raise DetectionFailure(f"malformed detection: {e}") from e
            if lab is None:
                # never let the service introduce labels the prompt did not ask for
                continue
            if mask.shape != tuple(shape):
                raise DetectionFailure(f"mask shape {mask.shape} != image {tuple(shape)}")
            if not mask.any():
                continue
            out.append(Detection(lab, min(max(conf, 0.0), 1.0), mask))
        return out

    def detect(self, obs, prompt: ObjectPrompt) -> list[Detection]:
        if not prompt:
            raise ValueError("empty prompt")
        self.calls += 1
        self.last_error = None
        image = obs.rgb_handle if obs.rgb_handle is not None else depth_preview_png(obs.depth)
        payload = {"image": base64.b64encode(image).decode("ascii"), "prompt": prompt.rendered,
                   "box_threshold": self.box_threshold}
        try:
            return self.parse(self._post(payload), prompt, obs.depth.shape)
        except Exception as e:  # transport errors come in many types; all mean "nothing this step"
            self.last_error = f"{type(e).__name__}: {e}"
            log.warning("remote detection failed: %s", self.last_error)
            return []
