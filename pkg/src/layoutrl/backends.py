"""Candidate-group producers (remote chat model, seeded random, replay) and group scoring.

The random backend draws from numpy's PCG64 generator. Each canvas gets its
own substream, seeded from ``(seed, sha256(canvas_id))``, so a group does
not depend on which other canvases were rolled out before it.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import httpx
import numpy as np

from .geometry import BBox, Canvas, Element, Layout
from .grpo import GroupAdvantages, GRPOConfig, group_advantages
from .protocol import CandidateResponse, build_prompt, parse_response, serialize_layout
from .rewards import CompatibilityPolicy, RewardBreakdown, RewardWeights, hybrid_reward

logger = logging.getLogger(__name__)


class BackendError(RuntimeError):
    pass


class BackendKind(str, enum.Enum):
    REMOTE = "remote"
    RANDOM = "random"
    REPLAY = "replay"


@dataclass(frozen=True)
class PolicyBackendConfig:
    kind: BackendKind = BackendKind.RANDOM
    endpoint: Optional[str] = None
    model_name: Optional[str] = None
    temperature: float = 1.0
    group_size: int = 8
    timeout: float = 60.0
    max_retries: int = 3
    seed: Optional[int] = None
    replay_path: Optional[str] = None
    parallelism: int = 4
    api_key_env: str = "LAYOUTRL_API_KEY"
    retry_backoff: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.group_size < 1:
            raise BackendError("group_size must be >= 1")
        if self.temperature < 0:
            raise BackendError("temperature must be >= 0")
        if self.timeout <= 0 or self.max_retries < 0 or self.parallelism < 1:
            raise BackendError("timeout, max_retries and parallelism must be positive")
        if self.kind is BackendKind.REMOTE and not (self.endpoint and self.model_name):
            raise BackendError("remote backend needs endpoint and model_name")
        if self.kind is BackendKind.RANDOM and self.seed is None:
            raise BackendError("random backend needs a seed")
        if self.kind is BackendKind.REPLAY and not self.replay_path:
            raise BackendError("replay backend needs replay_path")


@dataclass(frozen=True)
class RolloutGroup:
    canvas_id: str
    candidates: tuple[CandidateResponse, ...]
    latencies: tuple[float, ...]
    failed: tuple[bool, ...] = ()

    def __len__(self) -> int:
        return len(self.candidates)


# ---------------------------------------------------------------------------
# random

def canvas_stream(seed: int, canvas_id: str) -> np.random.Generator:
    key = int.from_bytes(hashlib.sha256(canvas_id.encode("utf-8")).digest()[:8], "big")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))


def random_response(canvas: Canvas, rng: np.random.Generator) -> str:
    """A well-formed response placing the manifest uniformly inside the canvas."""
    W, H = canvas.width, canvas.height
    elements = []
    for i, cat in enumerate(canvas.manifest):
        w = float(rng.uniform(0.05, 0.5)) * W
        h = float(rng.uniform(0.05, 0.3)) * H
        x = float(rng.uniform(0, W - w))
        y = float(rng.uniform(0, H - h))
        elements.append(Element(BBox(x, y, w, h), cat, i))
    answer = serialize_layout(Layout(tuple(elements), canvas.id))
    return f"<think>Random placement of {len(elements)} elements.</think>\n<answer>{answer}</answer>"


def _rollout_random(canvas: Canvas, cfg: PolicyBackendConfig) -> RolloutGroup:
    rng = canvas_stream(cfg.seed, canvas.id)
    cands, lat = [], []
    for _ in range(cfg.group_size):
        t0 = time.perf_counter()
        cands.append(parse_response(random_response(canvas, rng)))
        lat.append(time.perf_counter() - t0)
    return RolloutGroup(canvas.id, tuple(cands), tuple(lat), (False,) * len(cands))


# ---------------------------------------------------------------------------
# replay

def load_replay(path) -> dict[str, list[str]]:
    """Read a rollout log into ``{canvas_id: [raw, ...]}`` ordered by candidate index."""
    groups: dict[str, list[tuple[int, str]]] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                groups.setdefault(str(rec["canvas_id"]), []).append((int(rec["candidate_index"]), rec["raw"]))
    except (OSError, ValueError, KeyError) as exc:
        raise BackendError(f"cannot read replay log {path}: {exc}") from exc
    return {k: [raw for _, raw in sorted(v, key=lambda t: t[0])] for k, v in groups.items()}


def _rollout_replay(canvas: Canvas, cfg: PolicyBackendConfig, cache: Optional[dict] = None) -> RolloutGroup:
    groups = cache if cache is not None else load_replay(cfg.replay_path)
    if canvas.id not in groups:
        raise BackendError(f"no recorded group for canvas {canvas.id!r}")
    raws = groups[canvas.id]
    return RolloutGroup(canvas.id, tuple(parse_response(r) for r in raws), (0.0,) * len(raws), (False,) * len(raws))


# ---------------------------------------------------------------------------
# remote

_TRANSIENT = {408, 409, 425, 429, 500, 502, 503, 504}


def _chat_once(client: httpx.Client, cfg: PolicyBackendConfig, messages: list) -> str:
    url = cfg.endpoint.rstrip("/") + "/chat/completions"
    body = {"model": cfg.model_name, "messages": messages, "temperature": cfg.temperature}
    last = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            time.sleep(cfg.retry_backoff * 2 ** (attempt - 1))
        try:
            resp = client.post(url, json=body, timeout=cfg.timeout)
        except httpx.TransportError as exc:
            last = exc
            continue
        if resp.status_code in _TRANSIENT:
            last = BackendError(f"HTTP {resp.status_code}")
            continue
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion: {exc}") from exc
    raise BackendError(f"gave up after {cfg.max_retries + 1} attempts: {last}")


def _rollout_remote(canvas: Canvas, cfg: PolicyBackendConfig, template: Optional[str],
                    client: Optional[httpx.Client] = None) -> RolloutGroup:
    prompt = build_prompt(canvas, template)
    messages = [
        {"role": "system", "content": prompt.instructions},
        {"role": "user", "content": prompt.text},
    ]
    headers = {}
    token = os.environ.get(cfg.api_key_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    own = client is None
    client = client or httpx.Client(headers=headers)

    def one(i: int):
        t0 = time.perf_counter()
        try:
            return _chat_once(client, cfg, messages), time.perf_counter() - t0, False
        except BackendError as exc:
            logger.warning("canvas %s candidate %d failed: %s", canvas.id, i, exc)
            return "", time.perf_counter() - t0, True

    try:
        with ThreadPoolExecutor(max_workers=min(cfg.parallelism, cfg.group_size)) as pool:
            results = list(pool.map(one, range(cfg.group_size)))
    finally:
        if own:
            client.close()
    if all(failed for _, _, failed in results):
        raise BackendError(f"all {cfg.group_size} completions failed for canvas {canvas.id!r}")
    return RolloutGroup(
        canvas.id,
        tuple(parse_response(raw) for raw, _, _ in results),
        tuple(t for _, t, _ in results),
        tuple(f for _, _, f in results),
    )


def rollout(canvas: Canvas, cfg: PolicyBackendConfig, template: Optional[str] = None, **kwargs) -> RolloutGroup:
    """Produce one group of candidate responses for ``canvas``."""
    if cfg.kind is BackendKind.RANDOM:
        return _rollout_random(canvas, cfg)
    if cfg.kind is BackendKind.REPLAY:
        return _rollout_replay(canvas, cfg, kwargs.get("replay_cache"))
    return _rollout_remote(canvas, cfg, template, kwargs.get("client"))


# ---------------------------------------------------------------------------
# scoring

@dataclass(frozen=True)
class GroupEvaluation:
    breakdowns: tuple[RewardBreakdown, ...]
    advantages: Optional[GroupAdvantages] = None
    canvas_id: str = "canvas"

    @property
    def rewards(self) -> list[float]:
        return [b.hybrid for b in self.breakdowns]

    def to_dict(self) -> dict:
        out = {
            "canvas_id": self.canvas_id,
            "rewards": self.rewards,
            "breakdowns": [b.to_dict() for b in self.breakdowns],
        }
        if self.advantages is not None:
            out["advantages"] = self.advantages.tolist()
            out["advantage_mode"] = self.advantages.mode.value
        return out


def evaluate_group(
    group: RolloutGroup,
    canvas: Canvas,
    reference: Optional[Layout] = None,
    weights: Optional[RewardWeights] = None,
    cfg: Optional[GRPOConfig] = None,
    policy: Optional[CompatibilityPolicy] = None,
    with_advantages: bool = True,
    workers: int = 1,
) -> GroupEvaluation:
    """Score every candidate and compute group-relative advantages.

    ``workers > 1`` scores candidates in a thread pool; results are identical
    to the sequential path and keep candidate order.
    """
    if not group.candidates:
        raise BackendError("empty rollout group")

    def score(c):
        return hybrid_reward(c, canvas, reference, weights, policy)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            breakdowns = tuple(pool.map(score, group.candidates))
    else:
        breakdowns = tuple(score(c) for c in group.candidates)
    adv = group_advantages([b.hybrid for b in breakdowns], cfg) if with_advantages else None
    return GroupEvaluation(breakdowns, adv, group.canvas_id)


class RolloutLog:
    """Append-only NDJSON log of scored candidates."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, group: RolloutGroup, evaluation: GroupEvaluation) -> None:
        lines = []
        for i, (cand, bd) in enumerate(zip(group.candidates, evaluation.breakdowns)):
            rec = {"canvas_id": group.canvas_id, "candidate_index": i, "raw": cand.raw, "breakdown": bd.to_dict()}
            lines.append(json.dumps(rec) + "\n")
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.writelines(lines)
