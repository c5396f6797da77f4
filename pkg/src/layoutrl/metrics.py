"""Corpus-level layout metrics: overlay, underlay effectiveness, occlusion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

from .geometry import (
    Canvas,
    Category,
    Layout,
    area,
    containment_ratio,
    intersection_area,
    jaccard,
    union_area,
    union_intersection_area,
)


class MetricsError(ValueError):
    pass


def _overlap_min_area(a, b) -> float:
    m = min(area(a), area(b))
    if m <= 0:
        return 0.0
    return min(1.0, intersection_area(a, b) / m)


_OVERLAP_MEASURES = {"jaccard": jaccard, "min_area": _overlap_min_area}


def overlay(layout: Layout, measure: str = "jaccard") -> float:
    """Mean pairwise overlap among non-underlay elements (lower is better).

    ``measure`` is ``"jaccard"`` or ``"min_area"`` (intersection over the
    smaller box).
    """
    try:
        fn = _OVERLAP_MEASURES[measure]
    except KeyError:
        raise MetricsError(f"unknown overlap measure {measure!r}; use 'jaccard' or 'min_area'") from None
    boxes = [e.bbox for e in layout.elements if e.category is not Category.UNDERLAY]
    if len(boxes) < 2:
        return 0.0
    vals = [fn(a, b) for a, b in combinations(boxes, 2)]
    return math.fsum(vals) / len(vals)


def underlay_effectiveness(layout: Layout) -> float:
    """Fraction of underlays that fully contain some non-underlay element."""
    underlays = layout.of(Category.UNDERLAY)
    if not underlays:
        return 1.0
    others = [e.bbox for e in layout.elements if e.category is not Category.UNDERLAY]
    supported = sum(
        1 for u in underlays if any(containment_ratio(o, u.bbox) >= 1.0 - 1e-9 for o in others)
    )
    return supported / len(underlays)


def occlusion(layout: Layout, canvas: Canvas) -> float:
    """Share of the saliency union covered by the element union (lower is better)."""
    sal = [s.bbox for s in canvas.saliency]
    denom = union_area(sal)
    if denom <= 0:
        return 0.0
    covered = union_intersection_area([e.bbox for e in layout.elements], sal)
    return min(1.0, covered / denom)


@dataclass
class MetricReport:
    ove: float
    und: float
    occ: float
    n_layouts: int
    per_layout: Optional[list] = field(default=None)

    def to_dict(self) -> dict:
        out = {"ove": self.ove, "und": self.und, "occ": self.occ, "n_layouts": self.n_layouts}
        if self.per_layout is not None:
            out["per_layout"] = [{"ove": o, "und": u, "occ": c} for o, u, c in self.per_layout]
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def to_table(self, name: str = "layouts") -> str:
        """Plain-text table in Ove / Und / Occ column order."""
        width = max(len(name), len("Method"))
        rows = [
            f"{'Method':<{width}}  {'Ove↓':>8}  {'Und↑':>8}  {'Occ↓':>8}",
            f"{name:<{width}}  {self.ove:>8.4f}  {self.und:>8.4f}  {self.occ:>8.4f}",
        ]
        return "\n".join(rows)


def report(items: Sequence[tuple[Layout, Canvas]], measure: str = "jaccard", keep_per_layout: bool = True) -> MetricReport:
    if not items:
        raise MetricsError("no layouts to evaluate")
    per = [(overlay(l, measure), underlay_effectiveness(l), occlusion(l, c)) for l, c in items]
    n = len(per)
    ove = math.fsum(p[0] for p in per) / n
    und = math.fsum(p[1] for p in per) / n
    occ = math.fsum(p[2] for p in per) / n
    return MetricReport(ove, und, occ, n, per if keep_per_layout else None)
