import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import oracle_area, oracle_containment, oracle_intersection, oracle_jaccard, random_box
from layoutrl.geometry import (
    BBox,
    Canvas,
    Category,
    GeometryError,
    Layout,
    SaliencyRegion,
    area,
    center,
    containment_ratio,
    intersection_area,
    jaccard,
    union_area,
    union_intersection_area,
)

coord = st.floats(-500, 500, allow_nan=False, allow_infinity=False)
size = st.floats(0, 300, allow_nan=False, allow_infinity=False)
boxes = st.builds(BBox, coord, coord, size, size)


@pytest.mark.parametrize("box,expected", [((0, 0, 2, 2), 4), ((5, 5, 0, 3), 0), ((1.5, 2.5, 3.0, 0.5), 1.5)])
def test_area_examples(box, expected):
    assert area(BBox(*box)) == pytest.approx(expected)


def test_area_matches_raster():
    assert oracle_area(BBox(1.5, 2.5, 3.0, 0.5)) == pytest.approx(1.5, abs=0.01)


@pytest.mark.parametrize("a,b,expected", [
    ((0, 0, 2, 2), (1, 1, 2, 2), 1),
    ((0, 0, 1, 1), (5, 5, 1, 1), 0),
    ((0, 0, 2, 2), (0, 0, 2, 2), 4),
])
def test_intersection_examples(a, b, expected):
    assert intersection_area(BBox(*a), BBox(*b)) == pytest.approx(expected)


def test_jaccard_examples():
    a = BBox(0, 0, 2, 2)
    assert jaccard(a, a) == 1.0
    assert jaccard(a, BBox(5, 5, 1, 1)) == 0.0
    assert jaccard(a, BBox(1, 1, 2, 2)) == pytest.approx(1 / 7)
    assert oracle_jaccard(a, BBox(1, 1, 2, 2)) == pytest.approx(1 / 7, abs=0.01)


def test_jaccard_of_two_empty_boxes_is_zero():
    assert jaccard(BBox(1, 1, 0, 0), BBox(1, 1, 0, 0)) == 0.0


def test_containment_examples():
    assert containment_ratio(BBox(1, 1, 1, 1), BBox(0, 0, 5, 5)) == 1.0
    assert containment_ratio(BBox(0, 0, 1, 1), BBox(3, 3, 1, 1)) == 0.0
    assert containment_ratio(BBox(0, 0, 2, 2), BBox(1, 0, 2, 2)) == pytest.approx(0.5)


def test_center_examples():
    assert center(BBox(0, 0, 2, 2)) == (1, 1)
    assert center(BBox(10, 20, 0, 0)) == (10, 20)
    assert center(BBox(3, 4, 5, 6)) == (5.5, 7)


@pytest.mark.parametrize("bad", [(0, 0, -1, 1), (0, 0, 1, math.nan), (math.inf, 0, 1, 1), ("1", 0, 1, 1)])
def test_bbox_rejects_bad_values(bad):
    with pytest.raises(GeometryError):
        BBox(*bad)


def test_canvas_rejects_non_positive_size():
    with pytest.raises(GeometryError):
        Canvas(0, 10)


def test_clamp_and_corners():
    assert BBox(-5, 90, 20, 20).clamp(100, 100) == BBox(0, 90, 15, 10)
    assert BBox.from_corners(1, 2, 4, 6) == BBox(1, 2, 3, 4)


def test_layout_helpers():
    layout = Layout.from_boxes([("text", 0, 0, 1, 1), ("logo", 1, 1, 1, 1), ("Title", 2, 2, 1, 1)])
    assert layout.categories() == [Category.TEXT, Category.LOGO, Category.TEXT]
    assert len(layout.of(Category.TEXT)) == 2


def test_union_area_against_raster(rng):
    from conftest import raster_masks, window_of

    for _ in range(20):
        bs = [random_box(rng) for _ in range(rng.integers(1, 6))]
        masks, cell = raster_masks(bs, window_of(*bs))
        expected = np.logical_or.reduce(masks).sum() * cell
        assert union_area(bs) == pytest.approx(expected, rel=0.01)


def test_union_edge_cases():
    assert union_area([]) == 0.0
    assert union_area([BBox(0, 0, 2, 2), BBox(0, 0, 2, 2)]) == 4.0
    assert union_area([BBox(0, 0, 2, 2), BBox(2, 0, 2, 2)]) == 8.0
    assert union_intersection_area([BBox(0, 0, 4, 4)], [BBox(0, 0, 2, 2), BBox(1, 1, 2, 2)]) == pytest.approx(7.0)


def test_random_pairs_against_raster(rng):
    for _ in range(25):
        a, b = random_box(rng), random_box(rng)
        assert intersection_area(a, b) == pytest.approx(oracle_intersection(a, b), abs=0.01 * max(area(a), 1))
        assert jaccard(a, b) == pytest.approx(oracle_jaccard(a, b), abs=0.01)
        assert containment_ratio(a, b) == pytest.approx(oracle_containment(a, b), abs=0.01)


@given(boxes, boxes)
def test_intersection_symmetric_and_bounded(a, b):
    i = intersection_area(a, b)
    assert i == intersection_area(b, a)
    assert 0 <= i <= min(area(a), area(b)) + 1e-9


@given(boxes, boxes)
def test_jaccard_bounds(a, b):
    j = jaccard(a, b)
    assert 0.0 <= j <= 1.0
    assert j == jaccard(b, a)


@given(boxes, boxes)
def test_containment_bounds(a, b):
    assert 0.0 <= containment_ratio(a, b) <= 1.0


@given(st.lists(boxes, max_size=6), st.randoms(use_true_random=False))
@settings(max_examples=60)
def test_union_order_invariant_and_bounded(bs, r):
    u = union_area(bs)
    shuffled = list(bs)
    r.shuffle(shuffled)
    assert u == union_area(shuffled)
    assert u <= math.fsum(area(b) for b in bs) + 1e-6
    assert u >= max((area(b) for b in bs), default=0.0) - 1e-6


def test_canvas_wraps_bare_saliency_boxes():
    c = Canvas(100, 100, (BBox(10, 10, 20, 20),))
    assert c.saliency == (SaliencyRegion(BBox(10, 10, 20, 20)),)
    with pytest.raises(GeometryError):
        Canvas(100, 100, ((10, 10, 20, 20),))
