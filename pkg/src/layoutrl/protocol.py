"""Text contract between a canvas and an agent.

Covers prompt construction with ``[MASK]`` placeholders, extraction of the
``<think>``/``<answer>`` blocks from a raw completion, the canonical layout
JSON schema, and dataset ingestion.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

from .geometry import BBox, Canvas, Category, Element, GeometryError, Layout, SaliencyRegion

logger = logging.getLogger(__name__)

MASK = "[MASK]"
GEOMETRY_KEYS = ("x", "y", "width", "height")

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


class ProtocolError(ValueError):
    pass


class DatasetError(ProtocolError):
    pass


@dataclass(frozen=True)
class CandidateResponse:
    raw: str
    think: Optional[str] = None
    answer: Optional[str] = None
    warnings: tuple[str, ...] = ()


def parse_response(raw: Union[str, bytes, None]) -> CandidateResponse:
    """Split a raw completion into its reasoning and answer blocks.

    The first well-formed ``<think>...</think>`` and ``<answer>...</answer>``
    pairs are used; a missing block leaves the field as ``None``. Never raises.
    """
    if raw is None:
        raw = ""
    elif isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", errors="replace")
    elif not isinstance(raw, str):
        raw = str(raw)

    warnings = []
    think = answer = None
    matches = _THINK_RE.findall(raw)
    if matches:
        think = matches[0]
        if len(matches) > 1:
            warnings.append(f"{len(matches)} think blocks, using the first")
    matches = _ANSWER_RE.findall(raw)
    if matches:
        answer = matches[0]
        if len(matches) > 1:
            warnings.append(f"{len(matches)} answer blocks, using the first")
    for w in warnings:
        logger.warning(w)
    return CandidateResponse(raw=raw, think=think, answer=answer, warnings=tuple(warnings))


class ParseStatus(enum.Enum):
    UNPARSABLE = "Unparsable"
    ELEMENT_MISMATCH = "ElementMismatch"


@dataclass(frozen=True)
class LayoutParseFailure:
    """Why an answer block did not yield a usable layout.

    ``partial`` holds whatever elements were recognised, so callers can still
    score geometry for an ``ELEMENT_MISMATCH`` answer.
    """

    status: ParseStatus
    detail: str
    partial: Optional[Layout] = None


def _coerce_number(value, path: str) -> float:
    if isinstance(value, bool):
        raise ProtocolError(f"{path}: boolean is not a coordinate")
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        try:
            out = float(value.strip())
        except ValueError:
            raise ProtocolError(f"{path}: {value!r} is not numeric") from None
    else:
        raise ProtocolError(f"{path}: {value!r} is not numeric")
    if not math.isfinite(out):
        raise ProtocolError(f"{path}: non-finite value")
    return out


def _first_key(obj: dict, *names):
    for n in names:
        if n in obj:
            return obj[n]
    raise KeyError(names[0])


def _box_from_json(obj: dict, path: str) -> BBox:
    try:
        x = _first_key(obj, "x", "left")
        y = _first_key(obj, "y", "top")
        w = _first_key(obj, "width", "w")
        h = _first_key(obj, "height", "h")
    except KeyError as exc:
        raise ProtocolError(f"{path}: missing field {exc.args[0]!r}") from None
    vals = [_coerce_number(v, f"{path}.{k}") for v, k in zip((x, y, w, h), GEOMETRY_KEYS)]
    try:
        return BBox(*vals)
    except GeometryError as exc:
        raise ProtocolError(f"{path}: {exc}") from None


def _element_list(doc) -> list:
    if isinstance(doc, list):
        return doc
    if isinstance(doc, dict):
        for key in ("elements", "layout"):
            if isinstance(doc.get(key), list):
                return doc[key]
    raise ProtocolError("answer JSON has no element list")


def parse_layout_json(
    answer: Optional[str],
    canvas: Canvas,
    normalized: bool = False,
) -> Union[Layout, LayoutParseFailure]:
    """Parse an answer block into a :class:`Layout`.

    Accepts the canonical object, ``{"elements": [...]}`` or a bare element
    list. Numeric strings are coerced. Coordinates beyond twice the larger
    canvas side are rejected as implausible. With ``normalized=True`` the
    values are read as canvas fractions and scaled to pixels.

    Never raises; problems come back as a :class:`LayoutParseFailure`.
    """
    if answer is None or not answer.strip():
        return LayoutParseFailure(ParseStatus.UNPARSABLE, "empty answer block")
    try:
        doc = json.loads(answer)
    except (ValueError, RecursionError) as exc:
        return LayoutParseFailure(ParseStatus.UNPARSABLE, f"invalid JSON: {exc}")

    try:
        items = _element_list(doc)
    except ProtocolError as exc:
        return LayoutParseFailure(ParseStatus.UNPARSABLE, str(exc))

    limit = 2.0 * max(canvas.width, canvas.height)
    elements = []
    unknown = []
    for i, item in enumerate(items):
        path = f"elements[{i}]"
        if not isinstance(item, dict):
            return LayoutParseFailure(ParseStatus.UNPARSABLE, f"{path}: not an object")
        try:
            box = _box_from_json(item, path)
        except ProtocolError as exc:
            return LayoutParseFailure(ParseStatus.UNPARSABLE, str(exc))
        if normalized:
            box = BBox(box.x * canvas.width, box.y * canvas.height,
                       box.w * canvas.width, box.h * canvas.height)
        if any(abs(v) > limit for v in (box.x, box.y, box.x2, box.y2)):
            return LayoutParseFailure(ParseStatus.UNPARSABLE, f"{path}: coordinates outside ±{limit:g}")
        raw_cat = item.get("category", item.get("type", item.get("label")))
        try:
            cat = Category.parse(raw_cat)
        except KeyError:
            unknown.append(raw_cat)
            continue
        elements.append(Element(box, cat, len(elements)))

    layout = Layout(tuple(elements), canvas.id)
    if unknown:
        return LayoutParseFailure(
            ParseStatus.ELEMENT_MISMATCH, f"unknown categories {unknown!r}", partial=layout
        )
    return layout


def layout_to_dict(layout: Layout, canvas: Optional[Canvas] = None) -> dict:
    out: dict[str, Any] = {}
    if canvas is not None:
        out["canvas"] = {"width": _r(canvas.width), "height": _r(canvas.height)}
        out["saliency"] = [_box_dict(s.bbox) for s in canvas.saliency]
    out["elements"] = [{"category": e.category.value, **_box_dict(e.bbox)} for e in layout.elements]
    return out


def _r(v: float) -> float:
    out = round(float(v), 2)
    return 0.0 if out == 0 else out


def _box_dict(b: BBox) -> dict:
    return {"x": _r(b.x), "y": _r(b.y), "width": _r(b.w), "height": _r(b.h)}


def serialize_layout(layout: Layout, canvas: Optional[Canvas] = None) -> str:
    """Canonical JSON text for ``layout``; numbers rounded to 2 decimals."""
    return json.dumps(layout_to_dict(layout, canvas), separators=(", ", ": "))


def mask_layout_json(text: str) -> str:
    """Replace every element geometry value in canonical layout JSON with ``[MASK]``."""
    doc = json.loads(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("elements"), list):
        raise ProtocolError("not a canonical layout")
    sentinel = "\x00mask\x00"
    for item in doc["elements"]:
        for key in GEOMETRY_KEYS:
            if key in item:
                item[key] = sentinel
    return json.dumps(doc, separators=(", ", ": ")).replace(json.dumps(sentinel), MASK)


# ---------------------------------------------------------------------------
# canvas / layout JSON

def canvas_from_json(obj: dict, canvas_id: Optional[str] = None) -> Canvas:
    """Build a :class:`Canvas` from a canvas wire object.

    Two shapes are accepted: ``{"width", "height", "saliency"?, "manifest"?}``
    and the canonical layout object ``{"canvas": {...}, "saliency": [...],
    "elements": [...]}`` whose element categories become the manifest.
    """
    if not isinstance(obj, dict):
        raise ProtocolError("canvas must be an object")
    if "canvas" in obj and isinstance(obj["canvas"], dict):
        dims = obj["canvas"]
        saliency = obj.get("saliency", dims.get("saliency", []))
        manifest = obj.get("manifest", dims.get("manifest"))
        if manifest is None:
            manifest = [e.get("category") for e in obj.get("elements", [])]
        cid = canvas_id or obj.get("id") or dims.get("id") or "canvas"
    else:
        dims = obj
        saliency = obj.get("saliency", [])
        manifest = obj.get("manifest", [])
        cid = canvas_id or obj.get("id") or "canvas"
    try:
        width = _coerce_number(dims["width"], "canvas.width")
        height = _coerce_number(dims["height"], "canvas.height")
    except KeyError as exc:
        raise ProtocolError(f"canvas: missing field {exc.args[0]!r}") from None
    try:
        cats = tuple(Category.parse(c) for c in manifest)
    except KeyError as exc:
        raise ProtocolError(f"canvas.manifest: unknown category {exc.args[0]!r}") from None
    try:
        Canvas(width, height, (), cats, str(cid))  # validates dimensions early
    except GeometryError as exc:
        raise ProtocolError(f"canvas: {exc}") from None
    regions = []
    for i, s in enumerate(saliency or []):
        if isinstance(s, (list, tuple)) and len(s) == 4:
            s = dict(zip(GEOMETRY_KEYS, s))
        if not isinstance(s, dict):
            raise ProtocolError(f"saliency[{i}]: not an object")
        box = _box_from_json(s, f"saliency[{i}]").clamp(width, height)
        regions.append(SaliencyRegion(box, str(s.get("label", "salient"))))
    return Canvas(width, height, tuple(regions), cats, str(cid))


def canvas_to_dict(canvas: Canvas) -> dict:
    return {
        "id": canvas.id,
        "width": _r(canvas.width),
        "height": _r(canvas.height),
        "saliency": [{**_box_dict(s.bbox), "label": s.label} for s in canvas.saliency],
        "manifest": [c.value for c in canvas.manifest],
    }


def layout_from_json(obj, canvas_ref: str = "canvas") -> Layout:
    """Strict layout reader for trusted files (references, predictions).

    Raises :class:`ProtocolError` on any problem, unlike :func:`parse_layout_json`.
    """
    items = _element_list(obj)
    elements = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ProtocolError(f"elements[{i}]: not an object")
        try:
            cat = Category.parse(item.get("category", item.get("type")))
        except KeyError:
            raise ProtocolError(f"elements[{i}].category: unknown {item.get('category')!r}") from None
        elements.append(Element(_box_from_json(item, f"elements[{i}]"), cat, i))
    return Layout(tuple(elements), canvas_ref)


# ---------------------------------------------------------------------------
# prompts

DEFAULT_TEMPLATE = resources.files("layoutrl.data").joinpath("prompt_template.txt").read_text("utf-8")


@dataclass(frozen=True)
class MaskedLayoutPrompt:
    canvas: Canvas
    masked_json: str
    instructions: str
    text: str


def masked_skeleton(canvas: Canvas) -> str:
    parts = [
        '{"category": "%s", "x": %s, "y": %s, "width": %s, "height": %s}' % (c.value, MASK, MASK, MASK, MASK)
        for c in canvas.manifest
    ]
    return '{"elements": [' + ", ".join(parts) + "]}"


def build_prompt(canvas: Canvas, template: Optional[str] = None) -> MaskedLayoutPrompt:
    """Render the user prompt for ``canvas``.

    ``template`` may use ``{canvas_json}``, ``{masked_layout}`` and
    ``{element_list}``; other braces are left untouched.
    """
    if not canvas.manifest:
        raise ProtocolError("canvas manifest is empty; nothing to place")
    template = DEFAULT_TEMPLATE if template is None else template
    canvas_json = json.dumps(
        {
            "width": _r(canvas.width),
            "height": _r(canvas.height),
            "saliency": [_box_dict(s.bbox) for s in canvas.saliency],
        }
    )
    masked = masked_skeleton(canvas)
    element_list = ", ".join(c.value for c in canvas.manifest)
    text = (
        template.replace("{canvas_json}", canvas_json)
        .replace("{masked_layout}", masked)
        .replace("{element_list}", element_list)
    )
    instructions = template.split("\n\n", 1)[0].strip()
    return MaskedLayoutPrompt(canvas=canvas, masked_json=masked, instructions=instructions, text=text)


# ---------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class DatasetRecord:
    canvas: Canvas
    reference: Optional[Layout]
    source_id: str


@dataclass
class LoadReport:
    path: str
    loaded: int = 0
    skipped: int = 0
    reasons: list[str] = field(default_factory=list)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons.append(reason)


def _canonical_record(obj: dict, lineno: int) -> DatasetRecord:
    sid = str(obj.get("id", obj.get("source_id", f"record-{lineno}")))
    canvas = canvas_from_json(obj, canvas_id=sid)
    reference = None
    if obj.get("elements"):
        reference = layout_from_json(obj["elements"], sid)
        if canvas.manifest and sorted(canvas.manifest) != sorted(reference.categories()):
            raise ProtocolError("reference does not match manifest")
        if not canvas.manifest:
            canvas = Canvas(canvas.width, canvas.height, canvas.saliency, tuple(reference.categories()), sid)
    return DatasetRecord(canvas, reference, sid)


# class ids as used by the PosterLayout release (1-based)
PKU_CLASSES = {1: Category.TEXT, 2: Category.LOGO, 3: Category.UNDERLAY}


def _read_canonical(path: Path, report: LoadReport) -> list[DatasetRecord]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(_canonical_record(json.loads(line), lineno))
            except (ValueError, KeyError, ProtocolError, GeometryError) as exc:
                report.skip(f"line {lineno}: {exc}")
    return records


def _read_pku(path: Path, report: LoadReport) -> list[DatasetRecord]:
    records = []
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                sid = row.get("id") or row.get("poster_path") or f"record-{lineno}"
                width, height = float(row["width"]), float(row["height"])
                classes = json.loads(row["cls_elem"])
                boxes = json.loads(row["box_elem"])
                if len(classes) != len(boxes):
                    raise ProtocolError("cls_elem/box_elem length mismatch")
                elements = []
                for i, (c, b) in enumerate(zip(classes, boxes)):
                    if int(c) not in PKU_CLASSES:
                        raise ProtocolError(f"unmappable class id {c!r}")
                    elements.append(Element(BBox.from_corners(*map(float, b)), PKU_CLASSES[int(c)], i))
                sal = [BBox.from_corners(*map(float, b)) for b in json.loads(row.get("sal_box") or "[]")]
                ref = Layout(tuple(elements), sid)
                canvas = Canvas(width, height, (), tuple(ref.categories()), sid).with_saliency(sal)
                records.append(DatasetRecord(canvas, ref, sid))
            except (ValueError, KeyError, TypeError, ProtocolError, GeometryError) as exc:
                report.skip(f"row {lineno}: {exc}")
    return records


def _read_cgl(path: Path, report: LoadReport) -> list[DatasetRecord]:
    with path.open(encoding="utf-8") as fh:
        doc = json.load(fh)
    names = {c["id"]: c["name"] for c in doc.get("categories", [])}
    by_image: dict = {}
    for ann in doc.get("annotations", []):
        by_image.setdefault(ann["image_id"], []).append(ann)
    saliency = {str(k): v for k, v in doc.get("saliency", {}).items()}
    records = []
    for img in doc.get("images", []):
        sid = str(img.get("file_name", img["id"]))
        try:
            elements = []
            for i, ann in enumerate(by_image.get(img["id"], [])):
                name = names.get(ann["category_id"], ann["category_id"])
                try:
                    cat = Category.parse(name)
                except KeyError:
                    raise ProtocolError(f"unmappable category {name!r}") from None
                elements.append(Element(BBox(*map(float, ann["bbox"])), cat, i))
            if not elements:
                raise ProtocolError("no annotations")
            sal = [BBox(*map(float, b)) for b in saliency.get(str(img["id"]), [])]
            ref = Layout(tuple(elements), sid)
            canvas = Canvas(float(img["width"]), float(img["height"]), (), tuple(ref.categories()), sid)
            records.append(DatasetRecord(canvas.with_saliency(sal), ref, sid))
        except (ValueError, KeyError, TypeError, ProtocolError, GeometryError) as exc:
            report.skip(f"image {sid}: {exc}")
    return records


_READERS = {"canonical": _read_canonical, "pku_like": _read_pku, "cgl_like": _read_cgl}


def load_dataset(path, format: str = "canonical") -> tuple[list[DatasetRecord], LoadReport]:
    """Read a dataset file, returning records and a skip report."""
    if format not in _READERS:
        raise DatasetError(f"unsupported dataset format {format!r}")
    path = Path(path)
    report = LoadReport(str(path))
    try:
        records = _READERS[format](path, report)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DatasetError(f"cannot parse {path}: {exc}") from exc
    report.loaded = len(records)
    if not records:
        raise DatasetError(f"{path}: no parseable records ({report.skipped} skipped)")
    if report.skipped:
        logger.info("%s: loaded %d records, skipped %d", path, report.loaded, report.skipped)
    return records, report


def ingest_dataset(path, format: str = "canonical") -> list[DatasetRecord]:
    return load_dataset(path, format)[0]


def record_to_dict(record: DatasetRecord) -> dict:
    """Inverse of the canonical reader: one NDJSON line as a dict."""
    out = canvas_to_dict(record.canvas)
    out["id"] = record.source_id
    if record.reference is not None:
        out["elements"] = layout_to_dict(record.reference)["elements"]
    return out
