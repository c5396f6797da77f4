"""Synthetic canvases and layouts: fuzz generators, demo canvases, a clean corpus."""

from __future__ import annotations

import json
from importlib import resources
from typing import Optional

import numpy as np

from .geometry import BBox, Canvas, Category, Element, Layout, SaliencyRegion
from .protocol import DatasetRecord, canvas_from_json, layout_from_json, record_to_dict

CATEGORIES = list(Category)


def random_canvas(rng: np.random.Generator, n_saliency: Optional[int] = None, manifest=()) -> Canvas:
    width = float(rng.uniform(100, 1200))
    height = float(rng.uniform(100, 1200))
    if n_saliency is None:
        n_saliency = int(rng.integers(0, 5))
    regions = []
    for _ in range(n_saliency):
        w = float(rng.uniform(0, width))
        h = float(rng.uniform(0, height))
        regions.append(SaliencyRegion(BBox(float(rng.uniform(0, width - w)), float(rng.uniform(0, height - h)), w, h)))
    return Canvas(width, height, tuple(regions), tuple(manifest))


def random_layout(rng: np.random.Generator, canvas: Canvas, n: Optional[int] = None, spill: float = 0.2) -> Layout:
    """Uniform random boxes; up to ``spill`` of the canvas outside its bounds."""
    if n is None:
        n = int(rng.integers(1, 13))
    W, H = canvas.width, canvas.height
    items = []
    for _ in range(n):
        cat = CATEGORIES[int(rng.integers(0, len(CATEGORIES)))]
        w = float(rng.uniform(0, W))
        h = float(rng.uniform(0, H))
        x = float(rng.uniform(-spill * W, W * (1 + spill) - w))
        y = float(rng.uniform(-spill * H, H * (1 + spill) - h))
        items.append((cat, x, y, w, h))
    return Layout.from_boxes(items, canvas.id)


# ---------------------------------------------------------------------------
# bundled data

def _data_text(name: str) -> str:
    return resources.files("layoutrl.data").joinpath(name).read_text("utf-8")


def demo_canvases() -> list[Canvas]:
    """The three 5-element demo canvases used by the toy trainer."""
    return [canvas_from_json(obj) for obj in json.loads(_data_text("demo_canvases.json"))]


def load_clean_corpus() -> list[DatasetRecord]:
    out = []
    for line in _data_text("clean_corpus.ndjson").splitlines():
        obj = json.loads(line)
        canvas = canvas_from_json(obj, canvas_id=obj["id"])
        out.append(DatasetRecord(canvas, layout_from_json(obj["elements"], obj["id"]), obj["id"]))
    return out


# ---------------------------------------------------------------------------
# clean corpus

_SIZES = [(513.0, 750.0), (600.0, 800.0), (720.0, 960.0), (800.0, 600.0)]


def _clean_record(rng: np.random.Generator, idx: int) -> DatasetRecord:
    W, H = _SIZES[int(rng.integers(0, len(_SIZES)))]
    sal = BBox(
        round(float(rng.uniform(0.15, 0.4)) * W, 2),
        round(float(rng.uniform(0.05, 0.12)) * H, 2),
        round(float(rng.uniform(0.3, 0.45)) * W, 2),
        round(float(rng.uniform(0.25, 0.35)) * H, 2),
    )
    n_text = int(rng.integers(1, 4))
    n_under = int(rng.integers(0, n_text + 1))
    rows = [Category.TEXT] * n_text
    if rng.random() < 0.6:
        rows.insert(int(rng.integers(0, len(rows) + 1)), Category.LOGO)
    top, bottom = 0.55 * H, 0.95 * H
    row_h = (bottom - top) / len(rows)
    items = []
    underlaid = set(rng.choice(n_text, size=n_under, replace=False).tolist()) if n_under else set()
    text_i = 0
    for r, cat in enumerate(rows):
        y0 = top + r * row_h
        if cat is Category.LOGO:
            w, h = 0.2 * W, 0.6 * row_h
            items.append((cat, 0.4 * W, y0 + 0.2 * row_h, w, h))
            continue
        w = float(rng.uniform(0.4, 0.7)) * W
        x = (W - w) / 2
        h = 0.5 * row_h
        y = y0 + 0.25 * row_h
        if text_i in underlaid:
            m = 0.2 * row_h
            items.append((Category.UNDERLAY, x - m, y - m, w + 2 * m, h + 2 * m))
        items.append((Category.TEXT, x, y, w, h))
        text_i += 1
    items = [(c, round(x, 2), round(y, 2), round(w, 2), round(h, 2)) for c, x, y, w, h in items]
    sid = f"clean-{idx:03d}"
    layout = Layout.from_boxes(items, sid)
    canvas = Canvas(W, H, (SaliencyRegion(sal),), tuple(layout.categories()), sid)
    return DatasetRecord(canvas, layout, sid)


def clean_corpus(n: int = 50, seed: int = 20240901) -> list[DatasetRecord]:
    """Layouts with disjoint elements, one text per underlay, and clear saliency."""
    rng = np.random.default_rng(seed)
    return [_clean_record(rng, i) for i in range(n)]


def corrupt(record: DatasetRecord, rng: np.random.Generator) -> Layout:
    """Break a clean layout: stack non-underlays, orphan underlays, cover the saliency."""
    sal = record.canvas.saliency[0].bbox if record.canvas.saliency else record.canvas.bbox
    elements = []
    for e in record.reference.elements:
        b = e.bbox
        if e.category is Category.UNDERLAY:
            # push the underlay to the top-left corner, away from its text
            nb = BBox(0.0, 0.0, b.w * 0.5, b.h * 0.5)
        else:
            jitter = float(rng.uniform(0, 0.1)) * sal.w
            nb = BBox(sal.x + jitter, sal.y + jitter, max(b.w, sal.w * 0.8), max(b.h, sal.h * 0.8))
        elements.append(Element(nb, e.category, e.id))
    return Layout(tuple(elements), record.source_id)


def write_clean_corpus(path, n: int = 50, seed: int = 20240901) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in clean_corpus(n, seed):
            fh.write(json.dumps(record_to_dict(rec)) + "\n")
