"""Group-relative advantages and the clipped-surrogate / KL objective terms.

Rewards are outcome-level: every token of candidate ``i`` shares the
advantage ``A_i``. Aggregation always runs in candidate index order.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class GRPOError(ValueError):
    pass


class AdvantageMode(str, enum.Enum):
    MEAN_ONLY = "mean_only"
    MEAN_STD = "mean_std"


@dataclass(frozen=True)
class GRPOConfig:
    epsilon: float = 0.2
    beta: float = 0.01
    advantage_mode: AdvantageMode = AdvantageMode.MEAN_STD
    std_floor: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "advantage_mode", AdvantageMode(self.advantage_mode))
        if not 0 < self.epsilon <= 1:
            raise GRPOError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.beta < 0:
            raise GRPOError(f"beta must be >= 0, got {self.beta}")
        if self.std_floor <= 0:
            raise GRPOError("std_floor must be positive")


@dataclass(frozen=True, eq=False)
class GroupAdvantages:
    advantages: np.ndarray
    mode: AdvantageMode

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroupAdvantages):
            return NotImplemented
        return self.mode is other.mode and np.array_equal(self.advantages, other.advantages)

    __hash__ = None

    def __len__(self) -> int:
        return len(self.advantages)

    def tolist(self) -> list[float]:
        return [float(a) for a in self.advantages]


def group_advantages(rewards: Sequence[float], cfg: GRPOConfig | None = None) -> GroupAdvantages:
    """``r - mean(r)``, divided by ``popstd + std_floor`` in ``MEAN_STD`` mode."""
    cfg = cfg or GRPOConfig()
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise GRPOError(f"need a group of at least 2 rewards, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise GRPOError("rewards must be finite")
    adv = r - r.mean()
    if cfg.advantage_mode is AdvantageMode.MEAN_STD:
        adv = adv / (r.std() + cfg.std_floor)
    return GroupAdvantages(adv, cfg.advantage_mode)


@dataclass(frozen=True)
class TokenBatch:
    """Per-candidate token log-probabilities under the new, old and reference policies."""

    logprob_new: tuple[np.ndarray, ...]
    logprob_old: tuple[np.ndarray, ...]
    logprob_ref: tuple[np.ndarray, ...]

    def __post_init__(self):
        news, olds, refs = (tuple(np.asarray(x, dtype=np.float64) for x in seq)
                            for seq in (self.logprob_new, self.logprob_old, self.logprob_ref))
        if not (len(news) == len(olds) == len(refs)):
            raise GRPOError("new/old/ref must cover the same candidates")
        if not news:
            raise GRPOError("empty token batch")
        for i, (n, o, r) in enumerate(zip(news, olds, refs)):
            if n.ndim != 1 or n.size < 1 or n.shape != o.shape or n.shape != r.shape:
                raise GRPOError(f"candidate {i}: sequences must be non-empty and equally long")
        object.__setattr__(self, "logprob_new", news)
        object.__setattr__(self, "logprob_old", olds)
        object.__setattr__(self, "logprob_ref", refs)

    def __len__(self) -> int:
        return len(self.logprob_new)

    @classmethod
    def from_triples(cls, candidates) -> "TokenBatch":
        """Build from ``[[[new, old, ref], ...], ...]``: one list of token triples per candidate."""
        news, olds, refs = [], [], []
        for i, tokens in enumerate(candidates):
            arr = np.asarray(tokens, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise GRPOError(f"candidate {i}: expected a list of [new, old, ref] triples")
            news.append(arr[:, 0])
            olds.append(arr[:, 1])
            refs.append(arr[:, 2])
        return cls(tuple(news), tuple(olds), tuple(refs))

    @classmethod
    def from_json(cls, text: str) -> "TokenBatch":
        return cls.from_triples(json.loads(text))


def _advantage_array(adv) -> np.ndarray:
    return np.asarray(adv.advantages if isinstance(adv, GroupAdvantages) else adv, dtype=np.float64)


def clipped_surrogate(batch: TokenBatch, adv, cfg: GRPOConfig | None = None) -> float:
    cfg = cfg or GRPOConfig()
    a = _advantage_array(adv)
    if a.shape != (len(batch),):
        raise GRPOError(f"{len(batch)} candidates but {a.size} advantages")
    lo, hi = 1.0 - cfg.epsilon, 1.0 + cfg.epsilon
    per_candidate = []
    for new, old, a_i in zip(batch.logprob_new, batch.logprob_old, a):
        ratio = np.exp(new - old)
        term = np.minimum(ratio * a_i, np.clip(ratio, lo, hi) * a_i)
        per_candidate.append(term.mean())
    return float(np.mean(per_candidate))


def kl_per_token(new: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """``u - log u - 1`` with ``u = pi_ref / pi_new``; non-negative by construction."""
    d = np.asarray(ref, dtype=np.float64) - np.asarray(new, dtype=np.float64)
    return np.maximum(np.expm1(d) - d, 0.0)


def kl_to_reference(batch: TokenBatch) -> float:
    per_candidate = [kl_per_token(n, r).mean() for n, r in zip(batch.logprob_new, batch.logprob_ref)]
    return float(np.mean(per_candidate))


def grpo_objective(batch: TokenBatch, rewards: Sequence[float], cfg: GRPOConfig | None = None) -> float:
    cfg = cfg or GRPOConfig()
    adv = group_advantages(rewards, cfg)
    if len(adv) != len(batch):
        raise GRPOError(f"{len(batch)} candidates but {len(adv)} rewards")
    return clipped_surrogate(batch, adv, cfg) - cfg.beta * kl_to_reference(batch)
