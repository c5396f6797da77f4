"""Stateless JSON-over-HTTP reward service.

Endpoints::

    POST /v1/reward    score candidate responses for one canvas
    POST /v1/metrics   Ove / Und / Occ over a list of (canvas, layout) items
    GET  /v1/health    liveness plus the reward-config fingerprint

Request handling never mutates shared state apart from counters, so
concurrent and serial execution produce the same bytes.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Literal, Optional, Union

import anyio
from fastapi import FastAPI, Request, Response
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .geometry import Canvas, GeometryError, Layout
from .grpo import AdvantageMode, GRPOConfig, group_advantages
from .metrics import report
from .protocol import ProtocolError, canvas_from_json, layout_from_json
from .rewards import RewardConfig, RewardConfigError, RewardWeights, hybrid_reward

logger = logging.getLogger("layoutrl.service")


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    max_concurrent: int = 8
    reward_config_path: Optional[str] = None
    max_body_bytes: int = 2_000_000
    max_candidates: int = 64

    def __post_init__(self):
        if min(self.max_concurrent, self.max_body_bytes, self.max_candidates) <= 0:
            raise ValueError("service limits must be positive")
        if not 0 <= self.port < 65536:
            raise ValueError(f"bad port {self.port}")

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        """Build a config; ``LAYOUTRL_HOST``/``LAYOUTRL_PORT`` fill unset bind values."""
        env = {}
        if "LAYOUTRL_HOST" in os.environ:
            env["host"] = os.environ["LAYOUTRL_HOST"]
        if "LAYOUTRL_PORT" in os.environ:
            env["port"] = int(os.environ["LAYOUTRL_PORT"])
        env.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**env)


# ---------------------------------------------------------------------------
# request schemas

class _Model(BaseModel):
    model_config = ConfigDict(extra="ignore")


class BoxIn(_Model):
    x: float
    y: float
    width: float = Field(ge=0)
    height: float = Field(ge=0)
    label: Optional[str] = None


class ElementIn(BoxIn):
    category: str


class CanvasIn(_Model):
    width: float = Field(gt=0)
    height: float = Field(gt=0)
    saliency: list[BoxIn] = []
    manifest: list[str] = []
    id: str = "canvas"


class LayoutIn(_Model):
    elements: list[ElementIn]


class WeightsIn(_Model):
    lambda_f: Optional[float] = None
    lambda_q: Optional[float] = None
    lambda_u: Optional[float] = None
    quality_weights: Optional[dict[str, float]] = None


class RewardRequest(_Model):
    canvas: CanvasIn
    reference: Optional[Union[LayoutIn, list[ElementIn]]] = None
    candidates: list[str]
    weights: Optional[WeightsIn] = None
    advantage_mode: Optional[Literal["mean_only", "mean_std"]] = None


class MetricsItem(_Model):
    canvas: CanvasIn
    layout: Union[LayoutIn, list[ElementIn]]


class MetricsRequest(_Model):
    items: list[MetricsItem]
    overlap: Literal["jaccard", "min_area"] = "jaccard"


class RequestError(Exception):
    def __init__(self, status: int, message: str, path: str = ""):
        super().__init__(message)
        self.status = status
        self.message = message
        self.path = path

    def payload(self) -> dict:
        return {"error": self.message, "path": self.path}


def _loc(loc) -> str:
    return ".".join(str(p) for p in loc)


def _canvas(c: CanvasIn) -> Canvas:
    try:
        return canvas_from_json(c.model_dump(exclude_none=True))
    except (ProtocolError, GeometryError) as exc:
        raise RequestError(400, str(exc), "canvas") from None


def _layout(obj, path: str, canvas_ref: str) -> Layout:
    items = obj.elements if isinstance(obj, LayoutIn) else obj
    try:
        return layout_from_json([e.model_dump(exclude_none=True) for e in items], canvas_ref)
    except (ProtocolError, GeometryError) as exc:
        raise RequestError(400, str(exc), path) from None


def dumps(payload) -> bytes:
    return json.dumps(payload, separators=(",", ":"), allow_nan=False).encode("utf-8")


class RewardService:
    """Request handlers independent of the HTTP framework."""

    def __init__(self, config: Optional[ServiceConfig] = None, reward_config: Optional[RewardConfig] = None):
        self.config = config or ServiceConfig()
        self._lock = threading.Lock()
        self.counters = {"requests": 0, "errors": 0}
        self.reward_config = reward_config or self._load_reward_config()

    def _load_reward_config(self) -> RewardConfig:
        if self.config.reward_config_path:
            return RewardConfig.load(self.config.reward_config_path)
        return RewardConfig()

    def reload_config(self, reward_config: Optional[RewardConfig] = None) -> str:
        self.reward_config = reward_config or self._load_reward_config()
        return self.reward_config.fingerprint()

    def count(self, key: str) -> None:
        with self._lock:
            self.counters[key] += 1

    @staticmethod
    def _validate(model, body: bytes):
        try:
            data = json.loads(body)
        except ValueError as exc:
            raise RequestError(400, f"invalid JSON: {exc}", "$") from None
        try:
            return model.model_validate(data)
        except ValidationError as exc:
            err = exc.errors()[0]
            raise RequestError(400, err["msg"], _loc(err["loc"])) from None

    def health(self) -> dict:
        return {"status": "ok", "version": __version__, "reward_config_hash": self.reward_config.fingerprint()}

    def reward(self, body: bytes) -> dict:
        req = self._validate(RewardRequest, body)
        if not req.candidates:
            raise RequestError(422, "no candidates to score", "candidates")
        if len(req.candidates) > self.config.max_candidates:
            raise RequestError(413, f"at most {self.config.max_candidates} candidates per request", "candidates")
        canvas = _canvas(req.canvas)
        if not canvas.manifest:
            raise RequestError(400, "canvas manifest is empty", "canvas.manifest")
        reference = _layout(req.reference, "reference", canvas.id) if req.reference is not None else None
        rc = self.reward_config
        weights = rc.weights
        if req.weights is not None:
            try:
                weights = RewardWeights.from_dict({**weights.to_dict(), **req.weights.model_dump(exclude_none=True)})
            except RewardConfigError as exc:
                raise RequestError(400, str(exc), "weights") from None
        breakdowns = [hybrid_reward(c, canvas, reference, weights, rc.policy) for c in req.candidates]
        rewards = [b.hybrid for b in breakdowns]
        out = {"breakdowns": [b.to_dict() for b in breakdowns], "rewards": rewards}
        if len(rewards) >= 2:
            mode = AdvantageMode(req.advantage_mode or GRPOConfig().advantage_mode)
            out["advantages"] = group_advantages(rewards, GRPOConfig(advantage_mode=mode)).tolist()
            out["advantage_mode"] = mode.value
        return out

    def metrics(self, body: bytes) -> dict:
        req = self._validate(MetricsRequest, body)
        if not req.items:
            raise RequestError(422, "no items to evaluate", "items")
        pairs = []
        for i, item in enumerate(req.items):
            canvas = _canvas(item.canvas)
            pairs.append((_layout(item.layout, f"items.{i}.layout", canvas.id), canvas))
        return report(pairs, measure=req.overlap).to_dict()


def create_app(service: Optional[RewardService] = None) -> FastAPI:
    service = service or RewardService()
    app = FastAPI(title="layout reward service", version=__version__)
    app.state.service = service
    limiter = anyio.CapacityLimiter(service.config.max_concurrent)

    async def run(request: Request, handler) -> Response:
        t0 = time.perf_counter()
        service.count("requests")
        body = await request.body()
        status = 200
        try:
            if len(body) > service.config.max_body_bytes:
                raise RequestError(413, f"body exceeds {service.config.max_body_bytes} bytes", "$")
            payload = await anyio.to_thread.run_sync(handler, body, limiter=limiter)
        except RequestError as exc:
            service.count("errors")
            status, payload = exc.status, exc.payload()
        logger.info(json.dumps({
            "path": request.url.path, "status": status, "bytes": len(body),
            "ms": round(1000 * (time.perf_counter() - t0), 3),
        }))
        return Response(content=dumps(payload), status_code=status, media_type="application/json")

    @app.post("/v1/reward")
    async def reward(request: Request) -> Response:
        return await run(request, service.reward)

    @app.post("/v1/metrics")
    async def metrics(request: Request) -> Response:
        return await run(request, service.metrics)

    @app.get("/v1/health")
    async def health() -> Response:
        return Response(content=dumps(service.health()), media_type="application/json")

    return app
