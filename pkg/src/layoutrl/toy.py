"""Desk-scale policy-gradient trainer for a Gaussian layout policy.

Each element box is drawn as ``mu_i + sigma * N(0, I)`` in normalized canvas
coordinates (fractions of width/height). One gradient step is taken per
sampled group, so the new policy equals the sampling policy: the importance
ratio is exactly 1 and clipping never activates. What remains of the GRPO
objective is the group-relative baseline, which is what this trainer
exercises. There is no reference policy, so no KL term.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import BBox, Canvas, Element, Layout, center
from .grpo import AdvantageMode, GRPOConfig, group_advantages
from .rewards import CompatibilityPolicy, RewardWeights, quality_reward


class TrainingDivergence(FloatingPointError):
    pass


class RewardKind(str, enum.Enum):
    QUALITY = "quality"
    # diagnostic: negative normalized distance of each element center to the canvas center
    CENTER = "center"


@dataclass(frozen=True)
class ToyPolicy:
    mu: np.ndarray  # (n_elements, 4): x, y, w, h as canvas fractions
    log_sigma: float
    canvas: Canvas

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        if mu.shape != (len(self.canvas.manifest), 4):
            raise ValueError(f"mu must have shape ({len(self.canvas.manifest)}, 4), got {mu.shape}")
        object.__setattr__(self, "mu", mu)

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)

    @classmethod
    def initial(cls, canvas: Canvas, sigma: float = 0.08) -> "ToyPolicy":
        """All elements stacked in the middle of the canvas."""
        n = len(canvas.manifest)
        if n == 0:
            raise ValueError("canvas manifest is empty")
        mu = np.tile([0.35, 0.45, 0.3, 0.1], (n, 1))
        return cls(mu, math.log(sigma), canvas)

    def to_layout(self, params: Optional[np.ndarray] = None) -> Layout:
        """Pixel layout for ``params`` (defaults to the mean), with w, h >= 1 pixel."""
        p = self.mu if params is None else params
        W, H = self.canvas.width, self.canvas.height
        elements = []
        for i, (cat, (x, y, w, h)) in enumerate(zip(self.canvas.manifest, p)):
            elements.append(Element(BBox(float(x * W), float(y * H), float(max(w * W, 1.0)), float(max(h * H, 1.0))), cat, i))
        return Layout(tuple(elements), self.canvas.id)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500
    group_size: int = 8
    learning_rate: float = 0.0005
    sigma0: float = 0.08
    sigma_decay: float = 0.003  # per-iteration exponential decay rate; 0 keeps sigma fixed
    seed: int = 42
    advantage_mode: AdvantageMode = AdvantageMode.MEAN_STD
    reward: RewardKind = RewardKind.QUALITY

    def __post_init__(self):
        object.__setattr__(self, "advantage_mode", AdvantageMode(self.advantage_mode))
        object.__setattr__(self, "reward", RewardKind(self.reward))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.sigma0 <= 0 or self.sigma_decay < 0:
            raise ValueError("sigma0 must be > 0 and sigma_decay >= 0")


@dataclass(frozen=True)
class StepStats:
    iteration: int
    mean_reward: float
    max_reward: float
    sigma: float
    best_mean_reward: float


def sample_group(policy: ToyPolicy, G: int, rng: np.random.Generator, return_params: bool = False):
    """Draw ``G`` layouts; with ``return_params`` also return the raw Gaussian draws."""
    z = policy.mu[None] + policy.sigma * rng.standard_normal((G,) + policy.mu.shape)
    layouts = [policy.to_layout(zi) for zi in z]
    return (layouts, z) if return_params else layouts


def _center_reward(layout: Layout, canvas: Canvas) -> float:
    cx, cy = canvas.center
    d = [math.hypot(center(e.bbox)[0] - cx, center(e.bbox)[1] - cy) for e in layout.elements]
    return -math.fsum(d) / len(d) / canvas.half_diagonal


def layout_reward(layout: Layout, canvas: Canvas, kind: RewardKind,
                  weights: Optional[RewardWeights] = None, policy: Optional[CompatibilityPolicy] = None) -> float:
    if kind is RewardKind.CENTER:
        return _center_reward(layout, canvas)
    return quality_reward(layout, canvas, weights, policy)


def update_step(
    policy: ToyPolicy,
    weights: Optional[RewardWeights],
    cfg: TrainConfig,
    rng: np.random.Generator,
    compat: Optional[CompatibilityPolicy] = None,
) -> tuple[ToyPolicy, dict]:
    """One REINFORCE step with a group-relative baseline.

    ``mu += lr * mean_i(A_i * (z_i - mu) / sigma**2)``.
    """
    layouts, z = sample_group(policy, cfg.group_size, rng, return_params=True)
    rewards = np.array([layout_reward(l, policy.canvas, cfg.reward, weights, compat) for l in layouts])
    adv = group_advantages(rewards, GRPOConfig(advantage_mode=cfg.advantage_mode)).advantages
    sigma = policy.sigma
    with np.errstate(all="ignore"):
        grad = np.tensordot(adv, z - policy.mu[None], axes=1) / (cfg.group_size * sigma**2)
        mu = policy.mu + cfg.learning_rate * grad
    if not np.all(np.isfinite(mu)):
        finite = np.abs(grad[np.isfinite(grad)])
        biggest = f"{finite.max():.3g}" if finite.size else "nan"
        raise TrainingDivergence(f"non-finite policy mean (sigma={sigma:.3g}, largest finite |grad|={biggest})")
    stats = {"mean_reward": float(rewards.mean()), "max_reward": float(rewards.max()), "sigma": sigma}
    return replace(policy, mu=mu), stats


@dataclass
class TrainingTrace:
    steps: list[StepStats] = field(default_factory=list)
    policy: Optional[ToyPolicy] = None

    @property
    def mean_layout(self) -> Layout:
        return self.policy.to_layout()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "mean_reward", "max_reward", "sigma"])
        for s in self.steps:
            w.writerow([s.iteration, repr(s.mean_reward), repr(s.max_reward), repr(s.sigma)])
        return buf.getvalue()


def train(
    canvas: Canvas,
    weights: Optional[RewardWeights] = None,
    cfg: Optional[TrainConfig] = None,
    compat: Optional[CompatibilityPolicy] = None,
    policy: Optional[ToyPolicy] = None,
    callback=None,
) -> TrainingTrace:
    """Run ``cfg.iterations`` update steps from :meth:`ToyPolicy.initial`.

    ``callback(iteration, policy)`` is called after each step, e.g. to write
    SVG snapshots.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    policy = policy or ToyPolicy.initial(canvas, cfg.sigma0)
    trace = TrainingTrace()
    best = -math.inf
    for it in range(cfg.iterations):
        policy, stats = update_step(policy, weights, cfg, rng, compat)
        best = max(best, stats["mean_reward"])
        trace.steps.append(StepStats(it, stats["mean_reward"], stats["max_reward"], stats["sigma"], best))
        if cfg.sigma_decay:
            policy = replace(policy, log_sigma=policy.log_sigma - cfg.sigma_decay)
        if callback is not None:
            callback(it, policy)
    trace.policy = policy
    return trace
