"""Deterministic SVG rendering of a layout over its canvas."""

from __future__ import annotations

from typing import Optional
from xml.sax.saxutils import escape, quoteattr

from .geometry import Canvas, Category, Layout

COLORS = {
    Category.TEXT: "#e4572e",
    Category.LOGO: "#29335c",
    Category.UNDERLAY: "#f3a712",
    Category.EMBELLISHMENT: "#669bbc",
}


def _f(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_svg(layout: Layout, canvas: Optional[Canvas] = None) -> str:
    """One filled rectangle per element, dashed outlines for saliency regions.

    Underlays are drawn first so the elements they back stay visible. Without
    a canvas the view box is fitted to the elements.
    """
    if canvas is None:
        W = max([e.bbox.x2 for e in layout.elements] + [1.0])
        H = max([e.bbox.y2 for e in layout.elements] + [1.0])
        saliency = ()
    else:
        W, H, saliency = canvas.width, canvas.height, canvas.saliency
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(W)}" height="{_f(H)}" viewBox="0 0 {_f(W)} {_f(H)}">',
        f'  <rect class="canvas" x="0" y="0" width="{_f(W)}" height="{_f(H)}" fill="#fafafa" stroke="#333"/>',
    ]
    for s in saliency:
        b = s.bbox
        lines.append(
            f'  <rect class="saliency" x="{_f(b.x)}" y="{_f(b.y)}" width="{_f(b.w)}" height="{_f(b.h)}" '
            f'fill="none" stroke="#888" stroke-dasharray="6 4"><title>{escape(s.label)}</title></rect>'
        )
    ordered = sorted(layout.elements, key=lambda e: (e.category is not Category.UNDERLAY, e.id))
    for e in ordered:
        b = e.bbox
        lines.append(
            f'  <rect class="element {e.category.value}" data-id="{e.id}" x="{_f(b.x)}" y="{_f(b.y)}" '
            f'width="{_f(b.w)}" height="{_f(b.h)}" fill={quoteattr(COLORS[e.category])} fill-opacity="0.6" '
            f'stroke={quoteattr(COLORS[e.category])}/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
