"""Chat-completion backed providers with fenced-block output parsing."""
from __future__ import annotations

import base64
import json
import logging
import os
import re

from ..core import Instruction, ObjectLabel, dedup_labels
from . import DiscoveryResult, FrontierScores, Proposal, ProviderError

log = logging.getLogger(__name__)

_FENCE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n(.*?)```", re.DOTALL)
_KEYLIKE = re.compile(r"\b(sk|key|tok)-[A-Za-z0-9_\-]{8,}")


def parse_final_block(content: str):
    """(JSON value of the last fenced block, text before it). Raises ValueError if absent."""
    blocks = list(_FENCE.finditer(content))
    if not blocks:
        raise ValueError("no fenced block in response")
    last = blocks[-1]
    return json.loads(last.group(1)), content[:last.start()].strip()


class ChatClient:
    """Minimal client for ``POST {model, messages, temperature} -> {content}``.

    Every exchange is appended to `log` with the API key redacted; callers drain
    it into the episode trace.
    """

    def __init__(self, url: str | None = None, model: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0, retries: int = 2, temperature: float = 0.0, session=None):
        self.url = url or os.environ.get("FMNAV_CHAT_URL", "")
        self.model = model or os.environ.get("FMNAV_CHAT_MODEL", "gpt-4")
        self.api_key = api_key if api_key is not None else os.environ.get("FMNAV_CHAT_API_KEY", "")
        self.timeout = timeout
        self.retries = retries
        self.temperature = temperature
        self.session = session
        self.log: list[dict] = []

    def redact(self, text: str) -> str:
        if self.api_key:
            text = text.replace(self.api_key, "[REDACTED]")
        return _KEYLIKE.sub("[REDACTED]", text)

    def _summarize(self, messages) -> list[dict]:
        out = []
        for m in messages:
            c = m["content"]
            if isinstance(c, list):
                c = " ".join(p.get("text", "<image>") for p in c)
            out.append({"role": m["role"], "content": self.redact(str(c))[:2000]})
        return out

    def complete(self, messages: list[dict]) -> str:
        import requests

        payload = {"model": self.model, "messages": messages, "temperature": self.temperature}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        poster = self.session or requests
        resp = poster.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        body = resp.json()
        content = body.get("content") if isinstance(body, dict) else None
        if not isinstance(content, str):
            raise ValueError("response has no string 'content'")
        return content

    def ask(self, role: str, messages: list[dict], parse):
        """Call the endpoint and parse, retrying up to `retries` extra times."""
        errors = []
        for attempt in range(self.retries + 1):
            record = {"provider": role, "attempt": attempt, "request": self._summarize(messages)}
            try:
                content = self.complete(messages)
                record["response"] = self.redact(content)[:4000]
                result = parse(content)
                self.log.append(record)
                return result
            except Exception as e:  # transport, HTTP status and schema errors are all retryable
                record["error"] = self.redact(f"{type(e).__name__}: {e}")
                errors.append(record["error"])
                self.log.append(record)
        raise ProviderError(f"{role} failed after {self.retries + 1} attempts: {errors[-1]}")

    def drain_log(self) -> list[dict]:
        out, self.log = self.log, []
        return out


def _labels(items) -> list[ObjectLabel]:
    out = []
    for it in items:
        if isinstance(it, str):
            out.append(ObjectLabel(it))
        else:
            out.append(ObjectLabel(str(it["name"]), tuple(str(a) for a in it.get("attributes", ()))))
    return out


class RemoteProposer:
    def __init__(self, client: ChatClient, cot: bool = True):
        self.client = client
        self.cot = cot

    def messages(self, instruction: Instruction) -> list[dict]:
        how = ("Think step by step about what the person needs and where it could be, "
               "then list the objects." if self.cot else "List the objects without explanation.")
        return [
            {"role": "system", "content": "You help a household robot decide which objects to search for."},
            {"role": "user", "content":
                f"Instruction: {instruction.text}\n{how}\n"
                "Give each object a short lowercase name and any attributes (colour, location) the "
                "instruction mentions. End with a fenced JSON block: "
                '{"objects": [{"name": "...", "attributes": ["..."]}]}'},
        ]

    def propose(self, instruction: Instruction) -> Proposal:
        def parse(content):
            data, before = parse_final_block(content)
            objs = dedup_labels(_labels(data["objects"]))
            if not objs:
                raise ValueError("empty object list")
            return Proposal(objs, before if self.cot else "")

        return self.client.ask("propose", self.messages(instruction), parse)


class RemoteDiscoverer:
    def __init__(self, client: ChatClient):
        self.client = client

    def discover(self, obs, instruction: Instruction, known) -> DiscoveryResult:
        from ..perception import depth_preview_png

        image = obs.rgb_handle if obs.rgb_handle is not None else depth_preview_png(obs.depth)
        known = list(known)
        text = (f"Instruction: {instruction.text}\nObjects already known: "
                f"{', '.join(lab.phrase for lab in known) or 'none'}.\n"
                "List objects in the image that are not already known, and which of them could satisfy "
                'the instruction. End with a fenced JSON block: {"discovered": [...], "promoted": [...]}')
        messages = [{"role": "user", "content": [
            {"type": "text", "text": text},
            {"type": "image", "data": base64.b64encode(image).decode("ascii")},
        ]}]

        def parse(content):
            data, _ = parse_final_block(content)
            found = dedup_labels(_labels(data.get("discovered", [])))
            pool = {lab.key for lab in found} | {lab.key for lab in known}
            promoted = [lab for lab in dedup_labels(_labels(data.get("promoted", []))) if lab.key in pool]
            return DiscoveryResult(found, promoted)

        try:
            return self.client.ask("discover", messages, parse)
        except ProviderError as e:
            log.warning("discovery skipped: %s", e)
            return DiscoveryResult()


class RemoteScorer:
    def __init__(self, client: ChatClient):
        self.client = client

    def messages(self, frontiers, thought: str, goals) -> list[dict]:
        lines = [f"Area {i}: {f.summary}" for i, f in enumerate(frontiers)]
        body = ""
        if thought:
            body += f"Earlier reasoning: {thought}\n"
        body += (f"Goal objects: {', '.join(g.phrase for g in goals)}.\n" + "\n".join(lines) + "\n"
                 "Rate each area from 0 to 1 by how likely the goal is to be found there. End with a "
                 'fenced JSON block: {"scores": [...]} with one number per area in order.')
        return [{"role": "system", "content": "You guide a robot exploring an unfamiliar home."},
                {"role": "user", "content": body}]

    def score_frontiers(self, frontiers, prompt=None, thought: str = "", goals=()) -> FrontierScores:
        if not frontiers:
            raise ValueError("no frontiers to score")

        def parse(content):
            data, _ = parse_final_block(content)
            vals = [float(v) for v in data["scores"]]
            if len(vals) != len(frontiers):
                raise ValueError(f"expected {len(frontiers)} scores, got {len(vals)}")
            return FrontierScores([min(max(v, 0.0), 1.0) for v in vals])

        try:
            return self.client.ask("score", self.messages(frontiers, thought, goals), parse)
        except ProviderError as e:
            log.warning("frontier scoring fell back to uniform: %s", e)
            return FrontierScores([0.5] * len(frontiers))

    def choose_frontier(self, frontiers, goals, thought: str = "") -> int:
        msgs = self.messages(frontiers, thought, goals)
        msgs[-1]["content"] = msgs[-1]["content"].rsplit("Rate each area", 1)[0] + (
            'Pick the single most promising area. End with a fenced JSON block: {"choice": <area number>}')

        def parse(content):
            data, _ = parse_final_block(content)
            k = int(data["choice"])
            if not 0 <= k < len(frontiers):
                raise ValueError("choice out of range")
            return k

        try:
            return self.client.ask("choose", msgs, parse)
        except ProviderError as e:
            log.warning("frontier choice fell back to the largest: %s", e)
            return 0
