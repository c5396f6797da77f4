"""Hybrid layout reward: format tiers, quality sub-rewards, IoU matching.

The final score for one candidate is::

    hybrid = lambda_f * format + lambda_q * quality + lambda_u * iou

with defaults ``lambda_f = 0.1``, ``lambda_q = 0.8``, ``lambda_u = 0.1``.
All sums use :func:`math.fsum` so every component is independent of element
order, bit for bit.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .geometry import (
    SALIENT,
    Canvas,
    Category,
    Layout,
    center,
    containment_ratio,
    intersection_area,
    jaccard,
)
from .protocol import CandidateResponse, LayoutParseFailure, ParseStatus, parse_layout_json, parse_response

QUALITY_KEYS = ("icr", "al", "dis", "sp", "ut")


class RewardError(ValueError):
    pass


class RewardConfigError(RewardError):
    pass


class EmptyLayoutError(RewardError):
    pass


class MissingReferenceError(RewardError):
    pass


# ---------------------------------------------------------------------------
# configuration

def _uniform_quality_weights() -> dict:
    return {k: 0.2 for k in QUALITY_KEYS}


@dataclass(frozen=True)
class RewardWeights:
    lambda_f: float = 0.1
    lambda_q: float = 0.8
    lambda_u: float = 0.1
    quality_weights: Mapping[str, float] = field(default_factory=_uniform_quality_weights)

    def __post_init__(self):
        qw = dict(self.quality_weights)
        if set(qw) != set(QUALITY_KEYS):
            raise RewardConfigError(f"quality_weights must have keys {QUALITY_KEYS}, got {sorted(qw)}")
        object.__setattr__(self, "quality_weights", {k: float(qw[k]) for k in QUALITY_KEYS})
        top = (self.lambda_f, self.lambda_q, self.lambda_u)
        values = top + tuple(self.quality_weights.values())
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise RewardConfigError("weights must be finite and non-negative")
        if abs(math.fsum(top) - 1.0) > 1e-9:
            raise RewardConfigError(f"lambda_f + lambda_q + lambda_u must be 1, got {math.fsum(top)}")
        if abs(math.fsum(self.quality_weights.values()) - 1.0) > 1e-9:
            raise RewardConfigError("quality_weights must sum to 1")

    def without_iou(self) -> "RewardWeights":
        """Redistribute ``lambda_u`` onto ``lambda_f``/``lambda_q`` in proportion."""
        rest = self.lambda_f + self.lambda_q
        if rest <= 0:
            raise RewardConfigError("lambda_u is the only non-zero weight; a reference is required")
        return RewardWeights(self.lambda_f / rest, self.lambda_q / rest, 0.0, self.quality_weights)

    def to_dict(self) -> dict:
        return {
            "lambda_f": self.lambda_f,
            "lambda_q": self.lambda_q,
            "lambda_u": self.lambda_u,
            "quality_weights": dict(self.quality_weights),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RewardWeights":
        base = cls()
        try:
            return cls(
                float(d.get("lambda_f", base.lambda_f)),
                float(d.get("lambda_q", base.lambda_q)),
                float(d.get("lambda_u", base.lambda_u)),
                {**base.quality_weights, **dict(d.get("quality_weights", {}))},
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, RewardConfigError):
                raise
            raise RewardConfigError(str(exc)) from exc


def _pair(a, b) -> tuple[str, str]:
    a = a.value if isinstance(a, Category) else str(a)
    b = b.value if isinstance(b, Category) else str(b)
    return (a, b) if a <= b else (b, a)


def _default_penalized() -> frozenset:
    blocking = [Category.TEXT.value, Category.LOGO.value, Category.EMBELLISHMENT.value]
    pairs = {_pair(a, b) for a in blocking for b in blocking}
    pairs.add(_pair(Category.UNDERLAY.value, Category.UNDERLAY.value))
    pairs |= {_pair(c.value, SALIENT) for c in Category}
    return frozenset(pairs)


@dataclass(frozen=True)
class CompatibilityPolicy:
    """Which category pairs count as collisions.

    Pairs in neither set are neutral. ``salient`` is the pseudo-category for
    saliency regions. With ``boundary_obstacles`` on, the canvas exterior acts
    as an obstacle: the collision score is scaled by the mean fraction of
    element area that stays inside the canvas.
    """

    penalized_pairs: frozenset = field(default_factory=_default_penalized)
    exempt_pairs: frozenset = field(
        default_factory=lambda: frozenset({_pair(Category.UNDERLAY.value, Category.TEXT.value)})
    )
    boundary_obstacles: bool = True

    def __post_init__(self):
        try:
            pen = frozenset(_pair(*p) for p in self.penalized_pairs)
            ex = frozenset(_pair(*p) for p in self.exempt_pairs)
        except TypeError as exc:
            raise RewardConfigError(f"category pairs must have two members: {exc}") from exc
        if pen & ex:
            raise RewardConfigError(f"pairs both penalized and exempt: {sorted(pen & ex)}")
        object.__setattr__(self, "penalized_pairs", pen)
        object.__setattr__(self, "exempt_pairs", ex)

    def penalizes(self, a, b) -> bool:
        return _pair(a, b) in self.penalized_pairs

    def to_dict(self) -> dict:
        return {
            "penalized_pairs": [list(p) for p in sorted(self.penalized_pairs)],
            "exempt_pairs": [list(p) for p in sorted(self.exempt_pairs)],
            "boundary_obstacles": self.boundary_obstacles,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CompatibilityPolicy":
        base = cls()
        try:
            pen = d.get("penalized_pairs")
            ex = d.get("exempt_pairs")
            return cls(
                base.penalized_pairs if pen is None else frozenset(map(tuple, pen)),
                base.exempt_pairs if ex is None else frozenset(map(tuple, ex)),
                bool(d.get("boundary_obstacles", base.boundary_obstacles)),
            )
        except TypeError as exc:
            raise RewardConfigError(f"bad compatibility policy: {exc}") from exc


@dataclass(frozen=True)
class RewardConfig:
    weights: RewardWeights = field(default_factory=RewardWeights)
    policy: CompatibilityPolicy = field(default_factory=CompatibilityPolicy)

    def to_dict(self) -> dict:
        return {"weights": self.weights.to_dict(), "policy": self.policy.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RewardConfig":
        if not isinstance(d, Mapping):
            raise RewardConfigError("reward config must be a JSON object")
        return cls(
            RewardWeights.from_dict(d.get("weights", {})),
            CompatibilityPolicy.from_dict(d.get("policy", {})),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RewardConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise RewardConfigError(f"cannot read {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except ValueError as exc:
            if isinstance(exc, RewardConfigError):
                raise
            raise RewardConfigError(f"{path}: {exc}") from exc

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# format reward

class FormatTier(enum.IntEnum):
    MISSING_BLOCK = 0
    UNPARSABLE = 1
    ELEMENT_MISMATCH = 2
    VALID = 3

    @property
    def score(self) -> float:
        return TIER_SCORES[self]

    @property
    def label(self) -> str:
        return _TIER_LABELS[self]


TIER_SCORES = {
    FormatTier.MISSING_BLOCK: 0.1,
    FormatTier.UNPARSABLE: 0.2,
    FormatTier.ELEMENT_MISMATCH: 0.5,
    FormatTier.VALID: 1.0,
}
_TIER_LABELS = {
    FormatTier.MISSING_BLOCK: "MissingBlock",
    FormatTier.UNPARSABLE: "Unparsable",
    FormatTier.ELEMENT_MISMATCH: "ElementMismatch",
    FormatTier.VALID: "Valid",
}


@dataclass(frozen=True)
class FormatVerdict:
    tier: FormatTier
    detail: str
    layout: Optional[Layout] = field(default=None, compare=False)

    @property
    def score(self) -> float:
        return self.tier.score


_UNBOUNDED = Canvas(1e12, 1e12)


def format_reward(
    response: Union[CandidateResponse, str],
    manifest: Sequence[Category],
    canvas: Optional[Canvas] = None,
) -> FormatVerdict:
    """Grade a response: missing block, unparsable JSON, element mismatch, or valid.

    ``canvas`` enables the implausible-coordinate guard; the parsed layout (or
    the recognised part of it) rides along on the verdict.
    """
    if not isinstance(response, CandidateResponse):
        response = parse_response(response)
    if response.think is None or response.answer is None:
        missing = [n for n, v in (("think", response.think), ("answer", response.answer)) if v is None]
        return FormatVerdict(FormatTier.MISSING_BLOCK, f"missing {' and '.join(missing)} block")

    parsed = parse_layout_json(response.answer, canvas or _UNBOUNDED)
    if isinstance(parsed, LayoutParseFailure):
        if parsed.status is ParseStatus.UNPARSABLE:
            return FormatVerdict(FormatTier.UNPARSABLE, parsed.detail)
        return FormatVerdict(FormatTier.ELEMENT_MISMATCH, parsed.detail, parsed.partial)

    want = Counter(Category.parse(c) for c in manifest)
    got = Counter(parsed.categories())
    if want != got:
        diff = {c.value: got[c] - want[c] for c in set(want) | set(got) if got[c] != want[c]}
        return FormatVerdict(FormatTier.ELEMENT_MISMATCH, f"category count difference {diff}", parsed)
    return FormatVerdict(FormatTier.VALID, "ok", parsed)


# ---------------------------------------------------------------------------
# quality sub-rewards

def _require_elements(layout: Layout) -> None:
    if not layout.elements:
        raise EmptyLayoutError("layout has no elements to score")


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _pop_var(values: Sequence[float]) -> float:
    m = _mean(values)
    return math.fsum((v - m) ** 2 for v in values) / len(values)


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, v))


def inverse_collision_rate(layout: Layout, canvas: Canvas, policy: Optional[CompatibilityPolicy] = None) -> float:
    """Mean of ``1 - IoU`` over colliding pairs; 1 when no penalized pair exists."""
    policy = policy or CompatibilityPolicy()
    scores = []
    for a, b in combinations(layout.elements, 2):
        if policy.penalizes(a.category, b.category):
            scores.append(1.0 - jaccard(a.bbox, b.bbox))
    for e in layout.elements:
        if policy.penalizes(e.category, SALIENT):
            scores.extend(1.0 - jaccard(e.bbox, s.bbox) for s in canvas.saliency)
    value = _mean(scores) if scores else 1.0
    if policy.boundary_obstacles:
        inside = [containment_ratio(e.bbox, canvas.bbox) for e in layout.elements if e.bbox.w * e.bbox.h > 0]
        if inside:
            value *= _mean(inside)
    return _clamp01(value)


def alignment_score(layout: Layout, canvas: Canvas) -> float:
    _require_elements(layout)
    cx = [center(e.bbox)[0] for e in layout.elements]
    cy = [center(e.bbox)[1] for e in layout.elements]
    hd = canvas.half_diagonal
    mx, my = _mean(cx), _mean(cy)
    ccx, ccy = canvas.center
    to_canvas = 1.0 - min(1.0, math.hypot(mx - ccx, my - ccy) / hd)
    mutual = 1.0 - min(1.0, (_pop_var(cx) + _pop_var(cy)) / hd**2)
    return _clamp01((to_canvas + mutual) / 2.0)


def _grid_index(v: float, extent: float) -> Optional[int]:
    # boundary points belong to the lower-index cell
    if v < 0 or v > extent:
        return None
    if 3 * v <= extent:
        return 0
    if 3 * v <= 2 * extent:
        return 1
    return 2


def distribution_score(layout: Layout, canvas: Canvas) -> float:
    _require_elements(layout)
    centers = [center(e.bbox) for e in layout.elements]
    mx = _mean([c[0] for c in centers])
    my = _mean([c[1] for c in centers])
    spread_raw = _mean([(x - mx) ** 2 + (y - my) ** 2 for x, y in centers])
    spread = min(1.0, spread_raw / canvas.half_diagonal**2)
    cells = set()
    for x, y in centers:
        col, row = _grid_index(x, canvas.width), _grid_index(y, canvas.height)
        if col is not None and row is not None:
            cells.add((row, col))
    coverage = len(cells) / 9.0
    return _clamp01((spread + coverage) / 2.0)


def spacing_consistency(layout: Layout, canvas: Canvas) -> float:
    ys = sorted(center(e.bbox)[1] for e in layout.elements)
    gaps = [b - a for a, b in zip(ys, ys[1:])]
    if len(gaps) < 2:
        return 1.0
    mean_gap = _mean(gaps)
    if mean_gap <= 0:
        return 1.0
    return _clamp01(1.0 - _pop_var(gaps) / (mean_gap * canvas.height))


def underlay_text_reward(layout: Layout) -> float:
    """Score each underlay by the single text it backs; 1 when there are no underlays."""
    underlays = layout.of(Category.UNDERLAY)
    if not underlays:
        return 1.0
    texts = layout.of(Category.TEXT)
    scores = []
    for u in underlays:
        hits = [t for t in texts if intersection_area(t.bbox, u.bbox) > 0]
        if len(hits) != 1:
            scores.append(0.0)
        else:
            scores.append(containment_ratio(hits[0].bbox, u.bbox))
    return _clamp01(_mean(scores))


@dataclass(frozen=True)
class QualityScores:
    icr: float
    al: float
    dis: float
    sp: float
    ut: float
    quality: float

    def components(self) -> dict:
        return {k: getattr(self, k) for k in QUALITY_KEYS}


def aggregate_quality(components: Mapping[str, float], weights: Optional[RewardWeights] = None) -> float:
    weights = weights or RewardWeights()
    qw = weights.quality_weights
    return min(1.0, math.fsum(qw[k] * components[k] for k in QUALITY_KEYS))


def quality_breakdown(
    layout: Layout,
    canvas: Canvas,
    weights: Optional[RewardWeights] = None,
    policy: Optional[CompatibilityPolicy] = None,
) -> QualityScores:
    _require_elements(layout)
    comps = {
        "icr": inverse_collision_rate(layout, canvas, policy),
        "al": alignment_score(layout, canvas),
        "dis": distribution_score(layout, canvas),
        "sp": spacing_consistency(layout, canvas),
        "ut": underlay_text_reward(layout),
    }
    return QualityScores(**comps, quality=aggregate_quality(comps, weights))


def quality_reward(
    layout: Layout,
    canvas: Canvas,
    weights: Optional[RewardWeights] = None,
    policy: Optional[CompatibilityPolicy] = None,
) -> float:
    return quality_breakdown(layout, canvas, weights, policy).quality


# ---------------------------------------------------------------------------
# IoU against a reference

def iou_matching_reward(layout: Layout, reference: Layout) -> float:
    """Greedy per-category IoU matching, averaged over the larger element count.

    Candidate pairs are taken in descending IoU; ties are broken on box
    coordinates, not list position, so the score is order invariant.
    """
    if not reference.elements:
        raise MissingReferenceError("reference layout is empty; set lambda_u to 0 instead")
    total = []
    for cat in set(reference.categories()) | set(layout.categories()):
        preds = [e.bbox for e in layout.of(cat)]
        refs = [e.bbox for e in reference.of(cat)]
        cands = sorted(
            ((jaccard(p, r), p.as_tuple(), r.as_tuple(), i, j) for i, p in enumerate(preds) for j, r in enumerate(refs)),
            key=lambda c: (-c[0], c[1], c[2]),
        )
        used_p, used_r = set(), set()
        for iou, _, _, i, j in cands:
            if i in used_p or j in used_r:
                continue
            used_p.add(i)
            used_r.add(j)
            total.append(iou)
    n = max(len(layout.elements), len(reference.elements))
    return _clamp01(math.fsum(total) / n)


# ---------------------------------------------------------------------------
# hybrid score

def combine(format_score: float, quality: float, iou: float, weights: Optional[RewardWeights] = None) -> float:
    w = weights or RewardWeights()
    return min(1.0, math.fsum((w.lambda_f * format_score, w.lambda_q * quality, w.lambda_u * iou)))


@dataclass(frozen=True)
class RewardBreakdown:
    format: FormatVerdict
    icr: float
    al: float
    dis: float
    sp: float
    ut: float
    quality: float
    iou: float
    hybrid: float

    def to_dict(self) -> dict:
        """Flat wire form; field names are a compatibility contract."""
        return {
            "format_tier": self.format.tier.label,
            "format": self.format.score,
            "icr": self.icr,
            "al": self.al,
            "dis": self.dis,
            "sp": self.sp,
            "ut": self.ut,
            "quality": self.quality,
            "iou": self.iou,
            "hybrid": self.hybrid,
            "format_detail": self.format.detail,
        }

    def numeric(self) -> dict:
        d = self.to_dict()
        return {k: d[k] for k in ("format",) + QUALITY_KEYS + ("quality", "iou", "hybrid")}


def hybrid_reward(
    response: Union[CandidateResponse, str],
    canvas: Canvas,
    reference: Optional[Layout] = None,
    weights: Optional[RewardWeights] = None,
    policy: Optional[CompatibilityPolicy] = None,
) -> RewardBreakdown:
    """Score one candidate response end to end.

    When no layout can be parsed, quality and IoU are 0 and the hybrid is
    ``lambda_f * format``. Otherwise, without a reference, the IoU term is
    dropped and its weight is shared proportionally between format and
    quality.
    """
    weights = weights or RewardWeights()
    policy = policy or CompatibilityPolicy()
    verdict = format_reward(response, canvas.manifest, canvas)
    has_ref = reference is not None and len(reference.elements) > 0
    eff = weights if has_ref else weights.without_iou()

    layout = verdict.layout
    if verdict.tier < FormatTier.ELEMENT_MISMATCH or layout is None or not layout.elements:
        zero = 0.0
        return RewardBreakdown(verdict, zero, zero, zero, zero, zero, zero, zero,
                               combine(verdict.score, 0.0, 0.0, weights))

    q = quality_breakdown(layout, canvas, weights, policy)
    iou = iou_matching_reward(layout, reference) if has_ref else 0.0
    return RewardBreakdown(
        verdict, q.icr, q.al, q.dis, q.sp, q.ut, q.quality, iou,
        combine(verdict.score, q.quality, iou, eff),
    )


def score_candidates(
    responses: Iterable[Union[CandidateResponse, str]],
    canvas: Canvas,
    reference: Optional[Layout] = None,
    config: Optional[RewardConfig] = None,
) -> list[RewardBreakdown]:
    config = config or RewardConfig()
    return [hybrid_reward(r, canvas, reference, config.weights, config.policy) for r in responses]
