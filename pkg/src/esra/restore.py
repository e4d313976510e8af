"""Layout-faithful text restoration from OCR segments.

The pipeline is: reading-order sort, line partition, character-width
estimate from the dominant height cluster, and proportional spacing between
neighbouring segments on a line.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .ocr import BBox, OcrDocument, TextSegment, sort_reading_order

DEFAULT_R = 0.15
DEFAULT_L = 0.7


_HALF_SLACK = 1e-9


class CharWidthError(ValueError):
    pass


@dataclass(frozen=True)
class EsraParams:
    r: float = DEFAULT_R  # line tolerance, fraction of box height
    l: float = DEFAULT_L  # space expansion coefficient
    k: int = 3
    kmeans_max_iters: int = 50
    seed: int = 0
    x_first: bool = False  # reading order: left edge before top edge

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"r must be in [0, 1], got {self.r}")
        if not 0.0 < self.l <= 1.0:
            raise ValueError(f"l must be in (0, 1], got {self.l}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kmeans_max_iters < 1:
            raise ValueError("kmeans_max_iters must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Line:
    segments: tuple[TextSegment, ...]
    index: int


@dataclass(frozen=True)
class RestoredText:
    text: str
    # original segment index -> (line index, column of first character)
    line_map: dict[int, tuple[int, int]] = field(hash=False)
    char_width: float

    @property
    def n_lines(self) -> int:
        return self.text.count("\n") + 1

    def line_map_json(self) -> str:
        rows = [
            {"segment": i, "line": ln, "column": col}
            for i, (ln, col) in sorted(self.line_map.items())
        ]
        return json.dumps({"char_width": self.char_width, "segments": rows}, indent=1)


def _band(b: BBox) -> tuple[float, float]:
    half = b.eff_height / 2.0
    return b.y_mid - half, b.y_mid + half


def same_line(a: BBox, b: BBox, r: float) -> bool:
    """True when either box's vertical midpoint falls strictly inside the
    other's band after shrinking that band by ``r`` times its own height
    on both sides."""
    a0, a1 = _band(a)
    b0, b1 = _band(b)
    ea = r * a.eff_height
    eb = r * b.eff_height
    return (a0 + ea < b.y_mid < a1 - ea) or (b0 + eb < a.y_mid < b1 - eb)


def _partition(boxes: Sequence[BBox], r: float) -> list[list[int]]:
    # boxes are already in reading order; returns positions grouped by line
    if not boxes:
        return []
    groups = [[0]]
    for i in range(1, len(boxes)):
        if same_line(boxes[i - 1], boxes[i], r):
            groups[-1].append(i)
        else:
            groups.append([i])
    for g in groups:
        g.sort(key=lambda j: boxes[j].x0)
    return groups


def partition_lines(segments: Sequence[TextSegment], r: float = DEFAULT_R) -> list[Line]:
    """Split reading-ordered segments into lines by comparing each segment
    with its predecessor. Segments inside a line are re-sorted by ``x0``."""
    groups = _partition([s.bbox for s in segments], r)
    return [Line(tuple(segments[j] for j in g), idx) for idx, g in enumerate(groups)]


def kmeans_1d(
    values: Sequence[float], k: int, seed: int = 0, max_iters: int = 50
) -> tuple[list[int], list[float]]:
    """Lloyd's k-means on scalars with farthest-point seeding.

    ``k`` is clamped to the number of distinct values. Returns per-value
    cluster labels and the final centers.
    """
    if not values:
        return [], []
    distinct = sorted(set(values))
    k = max(1, min(k, len(distinct)))
    rng = random.Random(seed)
    centers = [rng.choice(distinct)]
    while len(centers) < k:
        best, best_d = None, -1.0
        for v in distinct:
            d = min(abs(v - c) for c in centers)
            if d > best_d:
                best, best_d = v, d
        centers.append(best)

    labels: list[int] = []
    for _ in range(max_iters):
        new_labels = [
            min(range(k), key=lambda c: (abs(v - centers[c]), c)) for v in values
        ]
        if new_labels == labels:
            break
        labels = new_labels
        for c in range(k):
            members = [v for v, lab in zip(values, labels) if lab == c]
            if members:
                centers[c] = sum(members) / len(members)
    return labels, centers


def _char_width(segments: Sequence[TextSegment], params: EsraParams) -> float:
    if not segments:
        raise CharWidthError("cannot estimate character width: no segments")
    if len(segments) == 1:
        chosen = list(segments)
    else:
        heights = [s.bbox.eff_height for s in segments]
        labels, _ = kmeans_1d(heights, params.k, params.seed, params.kmeans_max_iters)
        clusters: dict[int, list[int]] = {}
        for i, lab in enumerate(labels):
            clusters.setdefault(lab, []).append(i)

        def rank(members):
            chars = sum(len(segments[i].text) for i in members)
            mean_h = sum(heights[i] for i in members) / len(members)
            return (-chars, mean_h)

        best = min(clusters.values(), key=rank)
        chosen = [segments[i] for i in best]

    width = sum(s.bbox.width for s in chosen)
    chars = sum(len(s.text) for s in chosen)
    if width <= 0:
        # dominant cluster is all zero-width; fall back to every usable box
        usable = [s for s in segments if s.bbox.width > 0]
        width = sum(s.bbox.width for s in usable)
        chars = sum(len(s.text) for s in usable)
    if width <= 0 or chars <= 0:
        raise CharWidthError("cannot estimate character width")
    return width / chars


def estimate_char_width(lines: Sequence[Line], params: EsraParams = EsraParams()) -> float:
    """Average character width of the height cluster holding the most text."""
    return _char_width([s for line in lines for s in line.segments], params)


def space_count(gap: float, char_width: float, l: float) -> int:
    """Spaces between two neighbours ``gap`` pixels apart; never below one.
    Halves round up."""
    gap = max(gap, 0.0)
    # the slack keeps exact halves such as 10.5 / (10 * 0.7) rounding up
    # despite 10 * 0.7 evaluating to 7.000000000000001
    return max(math.floor(gap / (char_width * l) + 0.5 + _HALF_SLACK), 1)


def _join(segments: Sequence[TextSegment], char_width: float, l: float) -> tuple[str, list[int]]:
    parts: list[str] = []
    starts: list[int] = []
    col = 0
    prev = None
    for seg in segments:
        if prev is not None:
            n = space_count(seg.bbox.x0 - prev.bbox.x1, char_width, l)
            parts.append(" " * n)
            col += n
        starts.append(col)
        parts.append(seg.text)
        col += len(seg.text)
        prev = seg
    return "".join(parts), starts


def join_line(line: Line, char_width: float, l: float = DEFAULT_L) -> str:
    if not line.segments:
        raise ValueError("empty line")
    return _join(line.segments, char_width, l)[0]


def restore(doc: OcrDocument, params: EsraParams = EsraParams()) -> RestoredText:
    order = sorted(
        range(len(doc.segments)),
        key=(lambda i: (doc.segments[i].bbox.x0, doc.segments[i].bbox.y0))
        if params.x_first
        else (lambda i: (doc.segments[i].bbox.y0, doc.segments[i].bbox.x0)),
    )
    ordered = [doc.segments[i] for i in order]
    groups = _partition([s.bbox for s in ordered], params.r)
    char_width = _char_width(ordered, params)

    rows: list[str] = []
    line_map: dict[int, tuple[int, int]] = {}
    for line_idx, group in enumerate(groups):
        text, starts = _join([ordered[j] for j in group], char_width, params.l)
        rows.append(text)
        for j, col in zip(group, starts):
            line_map[order[j]] = (line_idx, col)
    return RestoredText("\n".join(rows), line_map, char_width)


__all__ = [
    "CharWidthError",
    "EsraParams",
    "Line",
    "RestoredText",
    "estimate_char_width",
    "join_line",
    "kmeans_1d",
    "partition_lines",
    "restore",
    "same_line",
    "sort_reading_order",
    "space_count",
]
