"""Layout-preserving text restoration from OCR boxes, report annotation
tooling, QA-bank generation and scoring for medical report benchmarks."""

from .ocr import BBox, OcrDocument, TextSegment, parse_ocr_json
from .restore import DEFAULT_L, DEFAULT_R, EsraParams, RestoredText, restore

__all__ = [
    "BBox", "OcrDocument", "TextSegment", "parse_ocr_json",
    "DEFAULT_L", "DEFAULT_R", "EsraParams", "RestoredText", "restore",
]
__version__ = "0.1.0"
