"""Document, extraction and geometry data model plus JSON ingestion.

Coordinates are absolute pixels with the origin at the top-left corner.
All model types are immutable after construction.
"""

from __future__ import annotations

import json
import math
import statistics
import unicodedata
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from .errors import DuplicateReadingOrder, EmptyCell, GeometryError, MalformedInput

ExtractionKind = Literal["kie", "lir"]


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise GeometryError(f"bbox coordinate {name}={v!r} is not a finite number")
            object.__setattr__(self, name, float(v))
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise GeometryError(f"inverted bbox {self.to_list()}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center_y(self) -> float:
        return (self.y0 + self.y1) / 2

    def intersection(self, other: BBox) -> BBox | None:
        x0, y0 = max(self.x0, other.x0), max(self.y0, other.y0)
        x1, y1 = min(self.x1, other.x1), min(self.y1, other.y1)
        if x1 < x0 or y1 < y0:
            return None
        return BBox(x0, y0, x1, y1)

    def intersection_area(self, other: BBox) -> float:
        inter = self.intersection(other)
        return 0.0 if inter is None else inter.area

    def iou(self, other: BBox) -> float:
        inter = self.intersection_area(other)
        union = self.area + other.area - inter
        if union <= 0:
            # Two degenerate boxes: equal ones are a perfect match.
            return 1.0 if self == other else 0.0
        return min(1.0, max(0.0, inter / union))

    def to_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> BBox:
        if not isinstance(coords, (list, tuple)) or len(coords) != 4:
            raise MalformedInput(f"bbox must be a list of 4 numbers, got {coords!r}")
        return cls(*coords)

    @staticmethod
    def union(boxes: Iterable[BBox]) -> BBox | None:
        boxes = list(boxes)
        if not boxes:
            return None
        return BBox(
            min(b.x0 for b in boxes),
            min(b.y0 for b in boxes),
            max(b.x1 for b in boxes),
            max(b.y1 for b in boxes),
        )


@dataclass(frozen=True)
class OcrWord:
    text: str
    bbox: BBox
    reading_order: int


@dataclass(frozen=True)
class OcrPage:
    width: int
    height: int
    words: tuple[OcrWord, ...] = ()

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"page size must be positive, got {self.width}x{self.height}")
        words = tuple(sorted(self.words, key=lambda w: w.reading_order))
        orders = [w.reading_order for w in words]
        if len(set(orders)) != len(orders):
            raise DuplicateReadingOrder(f"duplicate reading_order values in page: {orders}")
        if orders != list(range(len(orders))):
            raise MalformedInput(f"reading_order must be contiguous from 0, got {orders}")
        for w in words:
            b = w.bbox
            if b.x0 < 0 or b.y0 < 0 or b.x1 > self.width or b.y1 > self.height:
                raise GeometryError(
                    f"word {w.text!r} bbox {b.to_list()} lies outside page {self.width}x{self.height}"
                )
        object.__setattr__(self, "words", words)

    @classmethod
    def from_words(cls, width: int, height: int, words: Iterable[tuple[str, BBox]]) -> OcrPage:
        """Build a page from unordered ``(text, bbox)`` pairs, deriving reading order."""
        return cls(width, height, tuple(assign_reading_order(list(words))))

    def median_word_height(self) -> float:
        heights = [w.bbox.height for w in self.words]
        return statistics.median(heights) if heights else 0.0


@dataclass(frozen=True)
class OcrDocument:
    pages: tuple[OcrPage, ...] = ()


@dataclass(frozen=True)
class Cell:
    value: str | None = None
    bbox: BBox | None = None

    def __post_init__(self) -> None:
        if self.value is None and self.bbox is None:
            raise EmptyCell("a cell needs a value or a bbox; drop the key instead")
        if self.value is not None and not isinstance(self.value, str):
            raise MalformedInput(f"cell value must be a string, got {self.value!r}")

    def has(self, facet: str) -> bool:
        if facet == "content":
            return self.value is not None
        if facet == "location":
            return self.bbox is not None
        raise ValueError(f"unknown facet {facet!r}")


@dataclass(frozen=True)
class LineItem:
    cells: Mapping[str, Cell] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", dict(self.cells))

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class LineItemTable:
    rows: tuple[LineItem, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", tuple(self.rows))

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class KieExtraction:
    fields: Mapping[str, Cell] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "fields", dict(self.fields))

    def __len__(self) -> int:
        return len(self.fields)


def normalize_text(s: str) -> str:
    """NFKC-fold, lowercase and collapse whitespace."""
    s = unicodedata.normalize("NFKC", s)
    # Lowercasing can leave compatibility characters behind (and vice versa),
    # so a second pass keeps the function idempotent.
    s = unicodedata.normalize("NFKC", s.lower()).lower()
    return " ".join(s.split())


def assign_reading_order(words: Sequence[tuple[str, BBox]]) -> list[OcrWord]:
    """Order words top-to-bottom by line bins, then left-to-right.

    Lines are bins of the bbox vertical center with bin height equal to the
    median word height. Ties keep input order.
    """
    if not words:
        return []
    bin_h = statistics.median(b.height for _, b in words) or 1.0
    keyed = sorted(
        range(len(words)),
        key=lambda i: (math.floor(words[i][1].center_y / bin_h), words[i][1].x0, i),
    )
    return [OcrWord(words[i][0], words[i][1], order) for order, i in enumerate(keyed)]


def _load_json(data: bytes | str) -> Any:
    try:
        return json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedInput(f"invalid JSON: {exc}") from exc


def _expect(obj: Any, kind: type, where: str) -> Any:
    if not isinstance(obj, kind) or isinstance(obj, bool):
        raise MalformedInput(f"{where}: expected {kind.__name__}, got {type(obj).__name__}")
    return obj


def _parse_bbox(raw: Any, where: str, scale: tuple[float, float] | None = None) -> BBox:
    if not isinstance(raw, list) or len(raw) != 4:
        raise MalformedInput(f"{where}: bbox must be [x0, y0, x1, y1]")
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise MalformedInput(f"{where}: bbox coordinates must be numbers, got {v!r}")
    x0, y0, x1, y1 = raw
    if scale is not None:
        sx, sy = scale
        x0, x1, y0, y1 = x0 * sx, x1 * sx, y0 * sy, y1 * sy
    return BBox(x0, y0, x1, y1)


def parse_ocr_document(data: bytes | str, normalized: bool = False) -> OcrDocument:
    """Parse the OCR JSON format.

    With ``normalized=True`` bbox coordinates are read as fractions of the page
    size and converted to pixels. Pages whose words carry no ``reading_order``
    get one assigned by :func:`assign_reading_order`.
    """
    raw = _expect(_load_json(data), dict, "document")
    pages = []
    for p_idx, raw_page in enumerate(_expect(raw.get("pages"), list, "pages")):
        where = f"pages[{p_idx}]"
        _expect(raw_page, dict, where)
        width = _expect(raw_page.get("width"), int, f"{where}.width")
        height = _expect(raw_page.get("height"), int, f"{where}.height")
        if width <= 0 or height <= 0:
            raise GeometryError(f"{where}: page size must be positive")
        scale = (width, height) if normalized else None
        raw_words = _expect(raw_page.get("words", []), list, f"{where}.words")
        parsed: list[tuple[str, BBox, int | None]] = []
        for w_idx, rw in enumerate(raw_words):
            w_where = f"{where}.words[{w_idx}]"
            _expect(rw, dict, w_where)
            text = _expect(rw.get("text"), str, f"{w_where}.text")
            bbox = _parse_bbox(rw.get("bbox"), w_where, scale)
            order = rw.get("reading_order")
            if order is not None:
                _expect(order, int, f"{w_where}.reading_order")
                if order < 0:
                    raise MalformedInput(f"{w_where}: reading_order must be non-negative")
            parsed.append((text, bbox, order))

        given = [o for _, _, o in parsed if o is not None]
        if given and len(given) != len(parsed):
            raise MalformedInput(f"{where}: reading_order must be given for all words or none")
        if given:
            words = tuple(OcrWord(t, b, o) for t, b, o in parsed)
        else:
            words = tuple(assign_reading_order([(t, b) for t, b, _ in parsed]))
        pages.append(OcrPage(width, height, words))
    return OcrDocument(tuple(pages))


def ocr_document_to_dict(doc: OcrDocument) -> dict[str, Any]:
    return {
        "pages": [
            {
                "width": p.width,
                "height": p.height,
                "words": [
                    {"text": w.text, "bbox": w.bbox.to_list(), "reading_order": w.reading_order}
                    for w in p.words
                ],
            }
            for p in doc.pages
        ]
    }


def serialize_ocr_document(doc: OcrDocument) -> str:
    return json.dumps(ocr_document_to_dict(doc), ensure_ascii=False)


def _parse_cell(raw: Any, where: str) -> Cell:
    _expect(raw, dict, where)
    value = raw.get("value")
    if value is not None:
        _expect(value, str, f"{where}.value")
    bbox = raw.get("bbox")
    bbox = None if bbox is None else _parse_bbox(bbox, where)
    if value is None and bbox is None:
        raise EmptyCell(f"{where}: cell has neither value nor bbox")
    return Cell(value, bbox)


def _parse_cell_map(raw: Any, where: str) -> dict[str, Cell]:
    _expect(raw, dict, where)
    return {key: _parse_cell(cell, f"{where}.{key}") for key, cell in raw.items()}


def parse_extraction(data: bytes | str, kind: ExtractionKind) -> KieExtraction | LineItemTable:
    raw = _expect(_load_json(data), dict, "extraction")
    if kind == "kie":
        return KieExtraction(_parse_cell_map(raw.get("fields"), "fields"))
    if kind == "lir":
        rows = _expect(raw.get("rows"), list, "rows")
        return LineItemTable(
            tuple(LineItem(_parse_cell_map(r, f"rows[{i}]")) for i, r in enumerate(rows))
        )
    raise ValueError(f"unknown extraction kind {kind!r}")


def _cell_to_dict(cell: Cell) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if cell.value is not None:
        out["value"] = cell.value
    if cell.bbox is not None:
        out["bbox"] = cell.bbox.to_list()
    return out


def extraction_to_dict(x: KieExtraction | LineItemTable) -> dict[str, Any]:
    if isinstance(x, KieExtraction):
        return {"fields": {k: _cell_to_dict(c) for k, c in x.fields.items()}}
    return {"rows": [{k: _cell_to_dict(c) for k, c in row.cells.items()} for row in x.rows]}


def serialize_extraction(x: KieExtraction | LineItemTable) -> str:
    return json.dumps(extraction_to_dict(x), ensure_ascii=False)


def load_ocr_document(path: str | Path, normalized: bool = False) -> OcrDocument:
    return parse_ocr_document(Path(path).read_bytes(), normalized=normalized)


def load_extraction(path: str | Path, kind: ExtractionKind) -> KieExtraction | LineItemTable:
    return parse_extraction(Path(path).read_bytes(), kind)


# DocILE-style annotations: flat lists of field extractions with normalized
# bboxes; line item fields carry a ``line_item_id``.


def load_field_map(path: str | Path) -> dict[str, str]:
    raw = _expect(_load_json(Path(path).read_bytes()), dict, "field map")
    for k, v in raw.items():
        _expect(v, str, f"field map entry {k!r}")
    return dict(raw)


def _merge_cells(cells: list[Cell]) -> Cell:
    values = [c.value for c in cells if c.value is not None]
    boxes = [c.bbox for c in cells if c.bbox is not None]
    return Cell(" ".join(values) if values else None, BBox.union(boxes))


def from_docile(
    annotation: Mapping[str, Any],
    field_map: Mapping[str, str] | None = None,
    page_sizes: Sequence[tuple[int, int]] | None = None,
    page: int | None = None,
) -> tuple[KieExtraction, LineItemTable]:
    """Convert a DocILE-style annotation record into KIE and LIR extractions.

    ``field_map`` renames field types; unmapped names pass through. When
    ``page_sizes`` is given, normalized bboxes are scaled to pixels. Several
    extractions of one field type (within one line item) are joined with a
    space and their boxes unioned. ``page`` restricts to a single page.
    """
    field_map = field_map or {}

    def convert(raw: Mapping[str, Any], where: str) -> tuple[str, Cell] | None:
        if page is not None and raw.get("page", 0) != page:
            return None
        key = _expect(raw.get("fieldtype"), str, f"{where}.fieldtype")
        text = raw.get("text")
        bbox = None
        if raw.get("bbox") is not None:
            scale = None
            if page_sizes is not None:
                w, h = page_sizes[raw.get("page", 0)]
                scale = (w, h)
            bbox = _parse_bbox(list(raw["bbox"]), where, scale)
        if text is None and bbox is None:
            return None
        return field_map.get(key, key), Cell(text, bbox)

    kie: dict[str, list[Cell]] = {}
    for i, raw in enumerate(annotation.get("field_extractions", [])):
        converted = convert(raw, f"field_extractions[{i}]")
        if converted:
            kie.setdefault(converted[0], []).append(converted[1])

    items: dict[int, dict[str, list[Cell]]] = {}
    for i, raw in enumerate(annotation.get("line_item_extractions", [])):
        item_id = _expect(raw.get("line_item_id"), int, f"line_item_extractions[{i}].line_item_id")
        converted = convert(raw, f"line_item_extractions[{i}]")
        if converted:
            items.setdefault(item_id, {}).setdefault(converted[0], []).append(converted[1])

    extraction = KieExtraction({k: _merge_cells(v) for k, v in kie.items()})
    table = LineItemTable(
        tuple(
            LineItem({k: _merge_cells(v) for k, v in items[item_id].items()})
            for item_id in sorted(items)
        )
    )
    return extraction, table
