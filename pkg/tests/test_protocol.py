import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layoutrl.geometry import BBox, Canvas, Category, Layout, SaliencyRegion
from layoutrl.protocol import (
    CandidateResponse,
    DatasetError,
    LayoutParseFailure,
    ParseStatus,
    ProtocolError,
    build_prompt,
    canvas_from_json,
    canvas_to_dict,
    ingest_dataset,
    layout_from_json,
    load_dataset,
    mask_layout_json,
    masked_skeleton,
    parse_layout_json,
    parse_response,
    record_to_dict,
    serialize_layout,
)
from layoutrl.synthetic import load_clean_corpus, random_canvas, random_layout

T, U = Category.TEXT, Category.UNDERLAY


def test_mask_counts():
    assert masked_skeleton(Canvas(10, 10, (), (T,))).count("[MASK]") == 4
    prompt = build_prompt(Canvas(10, 10, (), (T, T, U)))
    assert prompt.masked_json.count("[MASK]") == 12


def test_prompt_is_deterministic(poster_canvas):
    assert build_prompt(poster_canvas).text == build_prompt(poster_canvas).text
    assert "<think>" in build_prompt(poster_canvas).text


def test_prompt_requires_manifest():
    with pytest.raises(ProtocolError):
        build_prompt(Canvas(10, 10))


def test_prompt_custom_template(poster_canvas):
    p = build_prompt(poster_canvas, "E={element_list}\n{canvas_json}\n{masked_layout}")
    assert p.text.startswith("E=text, text, underlay\n{\"width\": 100")
    assert p.text.endswith(p.masked_json)


def test_masked_skeleton_fills_to_valid_layout(poster_canvas):
    filled = masked_skeleton(poster_canvas).replace("[MASK]", "0")
    layout = parse_layout_json(filled, poster_canvas)
    assert isinstance(layout, Layout)
    assert layout.categories() == list(poster_canvas.manifest)


def test_parse_response_examples():
    r = parse_response("<think>a</think><answer>{}</answer>")
    assert r.think == "a" and r.answer == "{}"
    r = parse_response("<answer>{}</answer>")
    assert r.think is None and r.answer == "{}"
    r = parse_response("<think>never closed")
    assert r.think is None and r.answer is None


def test_parse_response_duplicates_use_first():
    r = parse_response("<think>a</think><answer>1</answer><answer>2</answer>")
    assert r.answer == "1" and r.warnings


def test_parse_response_accepts_bytes_and_none():
    assert parse_response(b"<think>\xff</think>").think is not None
    assert parse_response(None) == CandidateResponse("")


def test_parse_layout_examples(poster_canvas, poster_layout):
    ok = parse_layout_json(serialize_layout(poster_layout), poster_canvas)
    assert isinstance(ok, Layout)
    assert sorted(ok.categories()) == sorted(poster_canvas.manifest)
    banner = parse_layout_json('[{"category": "banner", "x": 1, "y": 1, "width": 2, "height": 2}]', poster_canvas)
    assert isinstance(banner, LayoutParseFailure) and banner.status is ParseStatus.ELEMENT_MISMATCH
    assert parse_layout_json("{{{", poster_canvas).status is ParseStatus.UNPARSABLE


def test_parse_layout_coerces_numeric_strings(canvas100):
    out = parse_layout_json('[{"category": "text", "x": "1.5", "y": 2, "width": "3", "height": 4}]', canvas100)
    assert out.elements[0].bbox == BBox(1.5, 2, 3, 4)


@pytest.mark.parametrize("bad", [
    '[{"category": "text", "x": 1e6, "y": 0, "width": 1, "height": 1}]',
    '[{"category": "text", "x": "abc", "y": 0, "width": 1, "height": 1}]',
    '[{"category": "text", "x": 0, "y": 0, "width": -1, "height": 1}]',
    '[{"category": "text", "x": 0, "y": 0}]',
    '"just a string"',
    '[1, 2, 3]',
    '',
])
def test_parse_layout_rejects(bad, canvas100):
    out = parse_layout_json(bad, canvas100)
    assert isinstance(out, LayoutParseFailure) and out.status is ParseStatus.UNPARSABLE


def test_parse_layout_normalized(canvas100):
    out = parse_layout_json('[{"category": "text", "x": 0.1, "y": 0.2, "width": 0.5, "height": 0.25}]', canvas100, normalized=True)
    assert out.elements[0].bbox == BBox(10, 20, 50, 25)


def test_serialize_preserves_order_and_masks(poster_layout):
    text = serialize_layout(poster_layout)
    assert [e["category"] for e in json.loads(text)["elements"]] == [c.value for c in poster_layout.categories()]
    masked = json.loads(mask_layout_json(text).replace("[MASK]", "0"))
    masked_text = mask_layout_json(text)
    for key in ("x", "y", "width", "height"):
        assert all(e[key] == 0 for e in masked["elements"])
    assert not any(ch.isdigit() for ch in masked_text)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_round_trip(seed):
    rng = np.random.default_rng(seed)
    canvas = random_canvas(rng)
    layout = random_layout(rng, canvas)
    back = parse_layout_json(serialize_layout(layout), canvas)
    assert isinstance(back, Layout)
    for a, b in zip(layout.elements, back.elements):
        assert a.category == b.category
        assert np.allclose(a.bbox.as_tuple(), b.bbox.as_tuple(), atol=0.01)


@given(st.binary(max_size=200))
@settings(max_examples=300)
def test_parse_response_never_raises(blob):
    r = parse_response(blob)
    assert isinstance(r.raw, str)


@given(st.text(alphabet=st.sampled_from(list("<>/thinkaswer{}[]\":,0123 ")), max_size=120))
@settings(max_examples=300)
def test_tag_soup_never_raises(text):
    r = parse_response(text)
    if r.answer is not None:
        assert parse_layout_json(r.answer, Canvas(100, 100)) is not None


def test_canvas_json_round_trip(poster_canvas):
    back = canvas_from_json(canvas_to_dict(poster_canvas))
    assert back == poster_canvas


def test_canvas_json_clamps_saliency():
    c = canvas_from_json({"width": 100, "height": 50, "saliency": [{"x": 80, "y": -10, "width": 50, "height": 30}],
                          "manifest": ["text"]})
    assert c.saliency[0].bbox == BBox(80, 0, 20, 20)


def test_layout_from_json_strict():
    with pytest.raises(ProtocolError):
        layout_from_json([{"category": "banner", "x": 0, "y": 0, "width": 1, "height": 1}])
    assert len(layout_from_json({"elements": [{"category": "logo", "x": 0, "y": 0, "width": 1, "height": 1}]})) == 1


# --- ingestion -----------------------------------------------------------------

def write_ndjson(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_ingest_canonical(tmp_path):
    recs = [record_to_dict(r) for r in load_clean_corpus()[:3]]
    path = tmp_path / "three.ndjson"
    write_ndjson(path, recs)
    records, report = load_dataset(path)
    assert len(records) == 3 and report.skipped == 0
    assert [r.source_id for r in records] == [r["id"] for r in recs]


def test_ingest_skips_unmappable_and_clamps(tmp_path):
    good = {"id": "a", "width": 100, "height": 100, "saliency": [{"x": 90, "y": 90, "width": 50, "height": 50}],
            "manifest": ["text"], "elements": [{"category": "text", "x": 1, "y": 1, "width": 5, "height": 5}]}
    bad = dict(good, id="b", manifest=["banner"], elements=[])
    path = tmp_path / "mixed.ndjson"
    write_ndjson(path, [good, bad])
    records, report = load_dataset(path)
    assert len(records) == 1 and report.skipped == 1
    assert records[0].canvas.saliency[0].bbox == BBox(90, 90, 10, 10)


def test_ingest_empty_and_missing(tmp_path):
    empty = tmp_path / "empty.ndjson"
    empty.write_text("")
    with pytest.raises(DatasetError):
        ingest_dataset(empty)
    with pytest.raises(DatasetError):
        ingest_dataset(tmp_path / "nope.ndjson")
    with pytest.raises(DatasetError):
        ingest_dataset(empty, "xml")


def test_ingest_pku_like(tmp_path):
    path = tmp_path / "train.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["poster_path", "width", "height", "cls_elem", "box_elem", "sal_box"])
        w.writerow(["p1.png", 513, 750, "[1, 3]", "[[10, 10, 110, 60], [5, 5, 120, 70]]", "[[0, 0, 600, 100]]"])
        w.writerow(["p2.png", 513, 750, "[9]", "[[0, 0, 1, 1]]", "[]"])
    records, report = load_dataset(path, "pku_like")
    assert len(records) == 1 and report.skipped == 1
    r = records[0]
    assert r.reference.categories() == [T, U]
    assert r.reference.elements[0].bbox == BBox(10, 10, 100, 50)
    assert r.canvas.saliency[0].bbox == BBox(0, 0, 513, 100)


def test_ingest_cgl_like(tmp_path):
    doc = {
        "images": [{"id": 1, "file_name": "a.png", "width": 200, "height": 300},
                   {"id": 2, "file_name": "b.png", "width": 200, "height": 300}],
        "categories": [{"id": 1, "name": "logo"}, {"id": 2, "name": "text"}, {"id": 5, "name": "mystery"}],
        "annotations": [{"image_id": 1, "category_id": 1, "bbox": [1, 2, 30, 40]},
                        {"image_id": 1, "category_id": 2, "bbox": [5, 60, 100, 20]},
                        {"image_id": 2, "category_id": 5, "bbox": [0, 0, 1, 1]}],
        "saliency": {"1": [[50, 50, 100, 100]]},
    }
    path = tmp_path / "cgl.json"
    path.write_text(json.dumps(doc))
    records, report = load_dataset(path, "cgl_like")
    assert len(records) == 1 and report.skipped == 1
    assert records[0].canvas.manifest == (Category.LOGO, T)
    assert records[0].canvas.saliency[0].bbox == BBox(50, 50, 100, 100)


def test_record_round_trip(tmp_path):
    corpus = load_clean_corpus()
    path = tmp_path / "c.ndjson"
    write_ndjson(path, [record_to_dict(r) for r in corpus])
    again = ingest_dataset(path)
    assert [record_to_dict(r) for r in again] == [record_to_dict(r) for r in corpus]


def test_reference_matches_manifest():
    for r in load_clean_corpus():
        assert sorted(r.reference.categories()) == sorted(r.canvas.manifest)
