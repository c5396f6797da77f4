"""scikit-learn style wrappers so the reward stack composes with pipelines and grid search.

``X`` is always a sequence of per-sample tuples rather than a numeric
matrix, because a sample is a canvas plus a layout or a response::

    LayoutQualityScorer().fit().transform([(layout, canvas), ...])
    HybridRewardScorer().fit().transform([(response, canvas, reference), ...])
    LayoutMetricsTransformer().fit().transform([(layout, canvas), ...])
    GroupAdvantageTransformer(advantage_mode="mean_only").fit_transform(rewards_2d)
    ToyLayoutPolicy(iterations=200).fit(canvas).predict()
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import Canvas, Layout
from .grpo import AdvantageMode, GRPOConfig, group_advantages
from .metrics import occlusion, overlay, underlay_effectiveness
from .protocol import CandidateResponse
from .rewards import (
    QUALITY_KEYS,
    CompatibilityPolicy,
    RewardBreakdown,
    RewardWeights,
    hybrid_reward,
    quality_breakdown,
    quality_reward,
)
from .toy import TrainConfig, train


# ---------------------------------------------------------------------------
# input validation helpers

def check_canvas(canvas) -> Canvas:
    if not isinstance(canvas, Canvas):
        raise TypeError(f"expected a Canvas, got {type(canvas).__name__}")
    return canvas


def check_layout(layout) -> Layout:
    if not isinstance(layout, Layout):
        raise TypeError(f"expected a Layout, got {type(layout).__name__}")
    return layout


def check_layout_pairs(X) -> list[tuple[Layout, Canvas]]:
    """Validate ``[(layout, canvas), ...]``; rejects empty input."""
    pairs = list(X)
    if not pairs:
        raise ValueError("X is empty")
    out = []
    for i, item in enumerate(pairs):
        try:
            layout, canvas = item
        except (TypeError, ValueError):
            raise ValueError(f"X[{i}] must be a (layout, canvas) pair") from None
        out.append((check_layout(layout), check_canvas(canvas)))
    return out


def check_response_triples(X) -> list[tuple]:
    """Validate ``[(response, canvas[, reference]), ...]``."""
    items = list(X)
    if not items:
        raise ValueError("X is empty")
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, (tuple, list)) or len(item) not in (2, 3):
            raise ValueError(f"X[{i}] must be (response, canvas) or (response, canvas, reference)")
        response, canvas, *rest = item
        if not isinstance(response, (str, bytes, CandidateResponse)):
            raise TypeError(f"X[{i}][0] must be a response string")
        reference = rest[0] if rest else None
        if reference is not None:
            check_layout(reference)
        out.append((response, check_canvas(canvas), reference))
    return out


def check_reward_groups(X) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError(f"expected (n_groups, group_size >= 2) rewards, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("rewards must be finite")
    return arr


# ---------------------------------------------------------------------------

class _RewardParamsMixin:
    def _weights(self) -> RewardWeights:
        qw = self.quality_weights if self.quality_weights is not None else {k: 0.2 for k in QUALITY_KEYS}
        base = RewardWeights()
        return RewardWeights(
            getattr(self, "lambda_f", base.lambda_f),
            getattr(self, "lambda_q", base.lambda_q),
            getattr(self, "lambda_u", base.lambda_u),
            qw,
        )

    def _policy(self) -> CompatibilityPolicy:
        return CompatibilityPolicy(boundary_obstacles=self.boundary_obstacles)


class LayoutQualityScorer(_RewardParamsMixin, TransformerMixin, BaseEstimator):
    """Quality sub-rewards for native layouts.

    ``transform`` returns an ``(n, 6)`` array with columns
    ``icr, al, dis, sp, ut, quality``; ``score`` is the mean quality.
    """

    feature_names = QUALITY_KEYS + ("quality",)

    def __init__(self, quality_weights: Optional[dict] = None, boundary_obstacles: bool = True):
        self.quality_weights = quality_weights
        self.boundary_obstacles = boundary_obstacles

    def fit(self, X=None, y=None):
        self.weights_ = self._weights()
        self.policy_ = self._policy()
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        rows = []
        for layout, canvas in check_layout_pairs(X):
            q = quality_breakdown(layout, canvas, self.weights_, self.policy_)
            rows.append([q.icr, q.al, q.dis, q.sp, q.ut, q.quality])
        return np.array(rows)

    def score(self, X, y=None) -> float:
        return float(self.transform(X)[:, -1].mean())

    def get_feature_names_out(self, input_features=None):
        return np.array(self.feature_names, dtype=object)


class HybridRewardScorer(_RewardParamsMixin, TransformerMixin, BaseEstimator):
    """Full hybrid reward for raw responses; ``transform`` returns the hybrid scores."""

    def __init__(self, lambda_f: float = 0.1, lambda_q: float = 0.8, lambda_u: float = 0.1,
                 quality_weights: Optional[dict] = None, boundary_obstacles: bool = True):
        self.lambda_f = lambda_f
        self.lambda_q = lambda_q
        self.lambda_u = lambda_u
        self.quality_weights = quality_weights
        self.boundary_obstacles = boundary_obstacles

    def fit(self, X=None, y=None):
        self.weights_ = self._weights()
        self.policy_ = self._policy()
        return self

    def breakdowns(self, X) -> list[RewardBreakdown]:
        check_is_fitted(self, "weights_")
        return [hybrid_reward(r, c, ref, self.weights_, self.policy_) for r, c, ref in check_response_triples(X)]

    def transform(self, X) -> np.ndarray:
        return np.array([b.hybrid for b in self.breakdowns(X)])

    def score(self, X, y=None) -> float:
        return float(self.transform(X).mean())


class LayoutMetricsTransformer(TransformerMixin, BaseEstimator):
    """Per-layout ``(ove, und, occ)`` rows."""

    def __init__(self, overlap: str = "jaccard"):
        self.overlap = overlap

    def fit(self, X=None, y=None):
        if self.overlap not in ("jaccard", "min_area"):
            raise ValueError(f"overlap must be 'jaccard' or 'min_area', got {self.overlap!r}")
        self.n_features_out_ = 3
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "n_features_out_")
        return np.array([
            [overlay(l, self.overlap), underlay_effectiveness(l), occlusion(l, c)]
            for l, c in check_layout_pairs(X)
        ])

    def get_feature_names_out(self, input_features=None):
        return np.array(["ove", "und", "occ"], dtype=object)


class GroupAdvantageTransformer(TransformerMixin, BaseEstimator):
    """Row-wise group-relative advantages for an ``(n_groups, G)`` reward matrix."""

    def __init__(self, advantage_mode: str = "mean_std", std_floor: float = 1e-8):
        self.advantage_mode = advantage_mode
        self.std_floor = std_floor

    def fit(self, X=None, y=None):
        self.config_ = GRPOConfig(advantage_mode=AdvantageMode(self.advantage_mode), std_floor=self.std_floor)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "config_")
        return np.stack([group_advantages(row, self.config_).advantages for row in check_reward_groups(X)])


class ToyLayoutPolicy(BaseEstimator):
    """Gaussian layout policy trained with group-relative policy gradients.

    ``fit(canvas)`` trains on one canvas; ``predict()`` returns the mean
    layout and ``score()`` its quality reward.
    """

    def __init__(self, iterations: int = 500, group_size: int = 8, learning_rate: float = 0.0005,
                 sigma0: float = 0.08, sigma_decay: float = 0.003, seed: int = 42,
                 advantage_mode: str = "mean_std", quality_weights: Optional[dict] = None):
        self.iterations = iterations
        self.group_size = group_size
        self.learning_rate = learning_rate
        self.sigma0 = sigma0
        self.sigma_decay = sigma_decay
        self.seed = seed
        self.advantage_mode = advantage_mode
        self.quality_weights = quality_weights

    def _weights(self) -> RewardWeights:
        qw = self.quality_weights if self.quality_weights is not None else {k: 0.2 for k in QUALITY_KEYS}
        return RewardWeights(quality_weights=qw)

    def fit(self, X, y=None):
        canvas = check_canvas(X)
        cfg = TrainConfig(
            iterations=self.iterations, group_size=self.group_size, learning_rate=self.learning_rate,
            sigma0=self.sigma0, sigma_decay=self.sigma_decay, seed=self.seed, advantage_mode=self.advantage_mode,
        )
        self.canvas_ = canvas
        self.trace_ = train(canvas, self._weights(), cfg)
        self.policy_ = self.trace_.policy
        self.mean_rewards_ = np.array([s.mean_reward for s in self.trace_.steps])
        return self

    def predict(self, X=None) -> Layout:
        check_is_fitted(self, "policy_")
        return self.policy_.to_layout()

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "policy_")
        return quality_reward(self.predict(), self.canvas_, self._weights())
