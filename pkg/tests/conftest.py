"""Shared fixtures plus a rasterization oracle for area-type quantities.

The oracle samples an ``N x N`` grid of cell centers over a bounding window
and counts hits, so it is independent of the analytic code paths it checks.
"""

import numpy as np
import pytest

from layoutrl.geometry import BBox, Canvas, Category, Layout, SaliencyRegion

GRID = 1024


def raster_masks(boxes, window, n=GRID):
    """Boolean masks of ``boxes`` over ``window=(x0, y0, x1, y1)``, plus the cell area."""
    x0, y0, x1, y1 = window
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    cell = (x1 - x0) * (y1 - y0) / (n * n)
    masks = []
    for b in boxes:
        mx = (xs >= b.x) & (xs < b.x + b.w)
        my = (ys >= b.y) & (ys < b.y + b.h)
        masks.append(my[:, None] & mx[None, :])
    return masks, cell


def window_of(*boxes):
    x0 = min(b.x for b in boxes)
    y0 = min(b.y for b in boxes)
    x1 = max(b.x + b.w for b in boxes)
    y1 = max(b.y + b.h for b in boxes)
    return (x0, y0, max(x1, x0 + 1e-9), max(y1, y0 + 1e-9))


def oracle_area(b):
    (m,), cell = raster_masks([b], window_of(b))
    return m.sum() * cell


def oracle_intersection(a, b):
    (ma, mb), cell = raster_masks([a, b], window_of(a, b))
    return (ma & mb).sum() * cell


def oracle_jaccard(a, b):
    (ma, mb), _ = raster_masks([a, b], window_of(a, b))
    union = (ma | mb).sum()
    return (ma & mb).sum() / union if union else 0.0


def oracle_containment(inner, outer):
    (mi, mo), _ = raster_masks([inner, outer], window_of(inner, outer))
    total = mi.sum()
    return (mi & mo).sum() / total if total else 0.0


def oracle_union_coverage(covering, covered):
    """Fraction of ``union(covered)`` that lies inside ``union(covering)``."""
    boxes = list(covering) + list(covered)
    masks, _ = raster_masks(boxes, window_of(*boxes))
    a = np.zeros_like(masks[0])
    for m in masks[: len(covering)]:
        a |= m
    b = np.zeros_like(masks[0])
    for m in masks[len(covering):]:
        b |= m
    return (a & b).sum() / b.sum() if b.sum() else 0.0


def random_box(rng, extent=100.0):
    w, h = rng.uniform(5, extent / 2, size=2)
    x, y = rng.uniform(0, extent - w), rng.uniform(0, extent - h)
    return BBox(float(x), float(y), float(w), float(h))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def canvas100():
    return Canvas(100, 100, (), (Category.TEXT, Category.LOGO), "c100")


@pytest.fixture
def poster_canvas():
    sal = (SaliencyRegion(BBox(40, 40, 20, 20)),)
    manifest = (Category.TEXT, Category.TEXT, Category.UNDERLAY)
    return Canvas(100, 100, sal, manifest, "poster")


@pytest.fixture
def poster_layout():
    return Layout.from_boxes([
        ("underlay", 5, 5, 40, 20),
        ("text", 10, 10, 20, 10),
        ("text", 10, 70, 30, 10),
    ])


# ---------------------------------------------------------------------------
# acceptance report: one line per criterion, printed at the end of the run

ACCEPTANCE_RESULTS = {}


def record_acceptance(key, ok, detail):
    line = f"{key} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[key] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split("-")[1])):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
