"""OCR segment model: parsing, validation, serialization and reading order.

Wire format for one document::

    {"image_id": "...", "image_type": "photo" | "scanned_pdf" | "screenshot",
     "page_width": 1240, "page_height": 1754,
     "segments": [{"text": "Hb", "bbox": [x0, x1, y0, y1]}, ...]}

Note the bbox order is ``[x0, x1, y0, y1]``, not the ``[x0, y0, x1, y1]``
convention used by most OCR engines.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable

logger = logging.getLogger(__name__)

IMAGE_TYPES = ("photo", "scanned_pdf", "screenshot")

# Degenerate boxes are widened to this many pixels wherever a height or width
# enters a division or a tolerance.
MIN_EXTENT = 1.0


class OcrParseError(ValueError):
    """Input is not well-formed JSON."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class OcrValidationError(ValueError):
    """Input is JSON but violates the document schema."""

    def __init__(self, message: str, segment_index: int | None = None):
        super().__init__(message)
        self.segment_index = segment_index


@dataclass(frozen=True)
class BBox:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        for name in ("x0", "x1", "y0", "y1"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")
        if self.x0 > self.x1:
            raise ValueError("x0 > x1")
        if self.y0 > self.y1:
            raise ValueError("y0 > y1")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def eff_height(self) -> float:
        return max(self.height, MIN_EXTENT)

    @property
    def y_mid(self) -> float:
        return (self.y0 + self.y1) / 2.0

    def as_wire(self) -> list[float]:
        return [self.x0, self.x1, self.y0, self.y1]


@dataclass(frozen=True)
class TextSegment:
    text: str
    bbox: BBox

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("segment text is empty")
        if "\n" in self.text or "\r" in self.text:
            raise ValueError("segment text contains a line break")


@dataclass(frozen=True)
class OcrDocument:
    image_id: str
    image_type: str
    segments: tuple[TextSegment, ...]
    page_width: float | None = None
    page_height: float | None = None

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id is empty")
        if self.image_type not in IMAGE_TYPES:
            raise ValueError(f"unknown image_type {self.image_type!r}")
        object.__setattr__(self, "segments", tuple(self.segments))


def _looks_like_xyxy(boxes: list[list[float]]) -> bool:
    # A file written as [x0, y0, x1, y1] tends to show x1 < y0 once read in
    # our field order; flag it when that holds for most segments.
    if not boxes:
        return False
    hits = sum(1 for b in boxes if b[1] < b[2])
    return hits / len(boxes) > 0.9


def document_from_dict(obj: dict, strict: bool = False) -> OcrDocument:
    """Build an :class:`OcrDocument` from an already-decoded JSON object."""
    if not isinstance(obj, dict):
        raise OcrValidationError("document must be a JSON object")
    for field in ("image_id", "image_type", "segments"):
        if field not in obj:
            raise OcrValidationError(f"missing field {field!r}")
    image_id = obj["image_id"]
    if not isinstance(image_id, str) or not image_id:
        raise OcrValidationError("image_id must be a non-empty string")
    if obj["image_type"] not in IMAGE_TYPES:
        raise OcrValidationError(f"image_type must be one of {IMAGE_TYPES}")
    raw_segments = obj["segments"]
    if not isinstance(raw_segments, list):
        raise OcrValidationError("segments must be a list")
    if not raw_segments:
        raise OcrValidationError("no segments")

    segments = []
    boxes = []
    for i, seg in enumerate(raw_segments):
        if not isinstance(seg, dict):
            raise OcrValidationError(f"segment {i} is not an object", i)
        if "text" not in seg:
            raise OcrValidationError(f"missing field 'text' at segment {i}", i)
        if "bbox" not in seg:
            raise OcrValidationError(f"missing field 'bbox' at segment {i}", i)
        text, box = seg["text"], seg["bbox"]
        if not isinstance(text, str) or not text.strip():
            raise OcrValidationError(f"empty text at segment {i}", i)
        if "\n" in text or "\r" in text:
            raise OcrValidationError(f"line break in text at segment {i}", i)
        if (
            not isinstance(box, list)
            or len(box) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in box)
        ):
            raise OcrValidationError(f"bbox must be 4 numbers at segment {i}", i)
        x0, x1, y0, y1 = (float(v) for v in box)
        if not all(math.isfinite(v) and v >= 0 for v in (x0, x1, y0, y1)):
            raise OcrValidationError(f"negative or non-finite coordinate at segment {i}", i)
        if x0 > x1:
            raise OcrValidationError(f"x0 > x1 at segment {i}", i)
        if y0 > y1:
            raise OcrValidationError(f"y0 > y1 at segment {i}", i)
        if x0 == x1 or y0 == y1:
            logger.warning("zero-area bbox at segment %d of %s", i, image_id)
        boxes.append([x0, x1, y0, y1])
        segments.append(TextSegment(text, BBox(x0, x1, y0, y1)))

    if strict and _looks_like_xyxy(boxes):
        raise OcrValidationError(
            "bbox values look like [x0, y0, x1, y1]; expected [x0, x1, y0, y1]"
        )

    def _opt(name):
        v = obj.get(name)
        if v is None:
            return None
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
            raise OcrValidationError(f"{name} must be a non-negative number")
        return float(v)

    return OcrDocument(
        image_id=image_id,
        image_type=obj["image_type"],
        segments=tuple(segments),
        page_width=_opt("page_width"),
        page_height=_opt("page_height"),
    )


def parse_ocr_json(data: bytes | str, strict: bool = False) -> OcrDocument:
    """Parse and validate one OCR document.

    Raises :class:`OcrParseError` for malformed JSON (with the byte offset of
    the failure) and :class:`OcrValidationError` for schema violations.
    """
    raw = data.encode("utf-8") if isinstance(data, str) else data
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise OcrParseError("invalid UTF-8", exc.start) from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise OcrParseError(exc.msg, offset) from exc
    return document_from_dict(obj, strict=strict)


def document_to_dict(doc: OcrDocument) -> dict:
    out: dict = {"image_id": doc.image_id, "image_type": doc.image_type}
    if doc.page_width is not None:
        out["page_width"] = doc.page_width
    if doc.page_height is not None:
        out["page_height"] = doc.page_height
    out["segments"] = [{"text": s.text, "bbox": s.bbox.as_wire()} for s in doc.segments]
    return out


def serialize_ocr(doc: OcrDocument) -> str:
    return json.dumps(document_to_dict(doc), ensure_ascii=False)


def sort_reading_order(
    segments: Iterable[TextSegment], x_first: bool = False
) -> list[TextSegment]:
    """Stable sort into reading order: by top edge, then left edge.

    ``x_first=True`` swaps the keys (left edge first), which is the literal
    "left to right, then top to bottom" reading.
    """
    if x_first:
        return sorted(segments, key=lambda s: (s.bbox.x0, s.bbox.y0))
    return sorted(segments, key=lambda s: (s.bbox.y0, s.bbox.x0))
