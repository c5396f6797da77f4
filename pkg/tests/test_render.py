from layoutrl.geometry import BBox, Canvas, Category, Layout, SaliencyRegion
from layoutrl.render import render_svg


def test_one_rect_per_element_underlays_first():
    layout = Layout.from_boxes([("text", 1, 1, 5, 5), ("underlay", 0, 0, 10, 10), ("logo", 20, 20, 4, 4)])
    svg = render_svg(layout)
    assert svg.count('class="element ') == 3
    assert svg.index("element underlay") < svg.index("element text")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_saliency_outlines_and_escaping():
    canvas = Canvas(50, 40, (SaliencyRegion(BBox(1, 2, 3, 4), "face & <hand>"),), (Category.TEXT,))
    svg = render_svg(Layout.from_boxes([("text", 0, 0, 1, 1)]), canvas)
    assert svg.count('class="saliency"') == 1 and "stroke-dasharray" in svg
    assert "face &amp; &lt;hand&gt;" in svg
    assert 'width="50"' in svg


def test_deterministic():
    layout = Layout.from_boxes([("embellishment", 0.125, 3, 2, 2)])
    assert render_svg(layout) == render_svg(layout)
