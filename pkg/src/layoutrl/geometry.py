"""Layout domain types and exact axis-aligned rectangle geometry.

Boxes are ``(x, y, w, h)`` in real-valued pixels with the origin at the
top-left corner of the canvas. Every function here is pure; zero-area boxes
are legal and contribute zero area everywhere.
"""

from __future__ import annotations

import enum
import math
import numbers
from dataclasses import dataclass
from typing import Iterable, Sequence


class GeometryError(ValueError):
    """Raised for boxes or canvases that violate their invariants."""


class Category(str, enum.Enum):
    TEXT = "text"
    LOGO = "logo"
    UNDERLAY = "underlay"
    EMBELLISHMENT = "embellishment"

    @classmethod
    def parse(cls, value) -> "Category":
        """Map a category name (case-insensitive, common dataset aliases) to a member.

        Raises ``KeyError`` for names that do not map.
        """
        if isinstance(value, Category):
            return value
        key = str(value).strip().lower()
        key = _CATEGORY_ALIASES.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        raise KeyError(value)


_CATEGORY_ALIASES = {
    "txt": "text",
    "title": "text",
    "underlay_text": "underlay",
    "background": "underlay",
    "embellish": "embellishment",
    "decoration": "embellishment",
}

# pseudo-category used by compatibility policies for saliency obstacles
SALIENT = "salient"


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, numbers.Real):
                raise GeometryError(f"{name} must be a real number, got {v!r}")
            if not math.isfinite(v):
                raise GeometryError(f"{name} must be finite, got {v!r}")
        if self.w < 0 or self.h < 0:
            raise GeometryError(f"negative size ({self.w}, {self.h})")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        x1, x2 = min(x1, x2), max(x1, x2)
        y1, y2 = min(y1, y2), max(y1, y2)
        return cls(x1, y1, x2 - x1, y2 - y1)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def clamp(self, width: float, height: float) -> "BBox":
        """Clip the box to ``[0, width] x [0, height]``."""
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        return BBox(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class Element:
    bbox: BBox
    category: Category
    id: int = 0


@dataclass(frozen=True)
class SaliencyRegion:
    bbox: BBox
    label: str = "salient"


@dataclass(frozen=True)
class Canvas:
    width: float
    height: float
    saliency: tuple[SaliencyRegion, ...] = ()
    manifest: tuple[Category, ...] = ()
    id: str = "canvas"

    def __post_init__(self):
        if not (math.isfinite(self.width) and math.isfinite(self.height)):
            raise GeometryError("canvas size must be finite")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"canvas size must be positive, got {self.width}x{self.height}")
        regions = []
        for s in self.saliency:
            if isinstance(s, BBox):
                s = SaliencyRegion(s)
            elif not isinstance(s, SaliencyRegion):
                raise GeometryError(f"saliency entries must be BBox or SaliencyRegion, got {type(s).__name__}")
            regions.append(s)
        object.__setattr__(self, "saliency", tuple(regions))
        object.__setattr__(self, "manifest", tuple(Category.parse(c) for c in self.manifest))

    @property
    def bbox(self) -> BBox:
        return BBox(0.0, 0.0, float(self.width), float(self.height))

    @property
    def center(self) -> tuple[float, float]:
        return (self.width / 2.0, self.height / 2.0)

    @property
    def half_diagonal(self) -> float:
        return math.hypot(self.width, self.height) / 2.0

    def with_saliency(self, boxes: Iterable[BBox], label: str = "salient") -> "Canvas":
        """Return a copy with ``boxes`` clamped to the canvas and appended as saliency."""
        extra = tuple(SaliencyRegion(b.clamp(self.width, self.height), label) for b in boxes)
        return Canvas(self.width, self.height, self.saliency + extra, self.manifest, self.id)


@dataclass(frozen=True)
class Layout:
    elements: tuple[Element, ...] = ()
    canvas_ref: str = "canvas"

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))

    @classmethod
    def from_boxes(cls, items: Iterable[tuple], canvas_ref: str = "canvas") -> "Layout":
        """Build a layout from ``(category, x, y, w, h)`` tuples, assigning ordinal ids."""
        elements = []
        for i, (cat, x, y, w, h) in enumerate(items):
            elements.append(Element(BBox(x, y, w, h), Category.parse(cat), i))
        return cls(tuple(elements), canvas_ref)

    def __len__(self) -> int:
        return len(self.elements)

    def categories(self) -> list[Category]:
        return [e.category for e in self.elements]

    def of(self, *categories: Category) -> list[Element]:
        return [e for e in self.elements if e.category in categories]


def area(b: BBox) -> float:
    return b.w * b.h


def intersection_area(a: BBox, b: BBox) -> float:
    dx = min(a.x2, b.x2) - max(a.x, b.x)
    dy = min(a.y2, b.y2) - max(a.y, b.y)
    if dx <= 0 or dy <= 0:
        return 0.0
    return dx * dy


def jaccard(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when both boxes have zero area."""
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def containment_ratio(inner: BBox, outer: BBox) -> float:
    """Fraction of ``inner``'s area that lies inside ``outer``."""
    a = area(inner)
    if a <= 0:
        return 0.0
    return min(1.0, intersection_area(inner, outer) / a)


def center(b: BBox) -> tuple[float, float]:
    return (b.x + b.w / 2.0, b.y + b.h / 2.0)


def _merged_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    intervals = sorted(iv for iv in intervals if iv[1] > iv[0])
    merged: list[tuple[float, float]] = []
    for lo, hi in intervals:
        if merged and lo <= merged[-1][1]:
            if hi > merged[-1][1]:
                merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    return merged


def _overlap_length(a: list[tuple[float, float]], b: list[tuple[float, float]]) -> float:
    # both lists sorted and disjoint
    i = j = 0
    total = 0.0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += hi - lo
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


def _slabs(boxes: Sequence[BBox]):
    xs = sorted({b.x for b in boxes} | {b.x2 for b in boxes})
    for x_lo, x_hi in zip(xs, xs[1:]):
        yield x_lo, x_hi


def union_area(boxes: Sequence[BBox]) -> float:
    """Exact area of the union of ``boxes`` by a sweep over compressed x-coordinates."""
    boxes = [b for b in boxes if area(b) > 0]
    total = 0.0
    for x_lo, x_hi in _slabs(boxes):
        active = [(b.y, b.y2) for b in boxes if b.x <= x_lo and b.x2 >= x_hi]
        covered = sum(hi - lo for lo, hi in _merged_intervals(active))
        total += covered * (x_hi - x_lo)
    return total


def union_intersection_area(first: Sequence[BBox], second: Sequence[BBox]) -> float:
    """Exact area of ``union(first) ∩ union(second)``."""
    first = [b for b in first if area(b) > 0]
    second = [b for b in second if area(b) > 0]
    if not first or not second:
        return 0.0
    total = 0.0
    for x_lo, x_hi in _slabs(first + second):
        a = _merged_intervals([(b.y, b.y2) for b in first if b.x <= x_lo and b.x2 >= x_hi])
        if not a:
            continue
        b_ = _merged_intervals([(b.y, b.y2) for b in second if b.x <= x_lo and b.x2 >= x_hi])
        total += _overlap_length(a, b_) * (x_hi - x_lo)
    return total
