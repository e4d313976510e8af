"""Annotation consistency checks and photo-quality sensors.

The sensors take already-detected page corners; nothing here looks at pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

from .annotation import (
    ReportAnnotation,
    SynonymSchema,
    canonicalize,
    expected_flag,
)

MIN_CORNERS = 3
SKEW_THRESHOLD_DEG = 15.0
# corner coordinates are floats; angles within this of the threshold count as equal
_ANGLE_TOL = 1e-9

ISSUE_SEVERITY = {
    "missing_key": "error",
    "missing_value": "error",
    "table_count_mismatch": "error",
    "abnormal_flag_mismatch": "error",
    "unmapped_key": "warning",
}


@dataclass(frozen=True)
class Issue:
    image_id: str
    code: str
    detail: str
    severity: str = ""

    def __post_init__(self):
        if self.code not in ISSUE_SEVERITY:
            raise ValueError(f"unknown issue code {self.code!r}")
        object.__setattr__(self, "severity", ISSUE_SEVERITY[self.code])

    def to_dict(self) -> dict:
        return asdict(self)


def validate_annotation(ann: ReportAnnotation, schema: SynonymSchema) -> list[Issue]:
    issues: list[Issue] = []

    def add(code, detail):
        issues.append(Issue(ann.image_id, code, detail))

    for i, kv in enumerate(ann.kv_pairs):
        if not kv.key.strip():
            add("missing_key", f"kv[{i}] has an empty key")
            continue
        if not kv.value.strip() and not kv.missing:
            add("missing_value", f"kv[{i}] ({kv.key}) has an empty value")
        if not canonicalize(kv.key, schema).mapped:
            add("unmapped_key", f"kv[{i}] key {kv.key!r} is not in the synonym schema")

    for i, q in enumerate(ann.quadruplets):
        if not q.item.strip():
            add("missing_key", f"table[{i}] has an empty item name")
        if not q.result.strip():
            add("missing_value", f"table[{i}] ({q.item}) has an empty result")
            continue
        want = expected_flag(q.result, q.range)
        if want != q.flag:
            add(
                "abnormal_flag_mismatch",
                f"table[{i}] ({q.item}) flagged {q.flag.value}, range implies {want.value}",
            )

    if ann.table_count is not None and ann.table_count != len(ann.quadruplets):
        add(
            "table_count_mismatch",
            f"declared {ann.table_count} table items, found {len(ann.quadruplets)}",
        )
    return issues


def repair_flags(ann: ReportAnnotation) -> ReportAnnotation:
    """Copy of ``ann`` with every stored flag replaced by the recomputed one."""
    quads = tuple(
        replace(q, flag=expected_flag(q.result, q.range)) if q.result.strip() else q
        for q in ann.quadruplets
    )
    return replace(ann, quadruplets=quads)


def issues_to_json(issues: Sequence[Issue]) -> str:
    return json.dumps([i.to_dict() for i in issues], ensure_ascii=False, indent=1)


# ---------------------------------------------------------------- sensors


@dataclass(frozen=True)
class CornerSet:
    corners: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.corners)
        if len(pts) > 4:
            raise ValueError("at most four corners")
        object.__setattr__(self, "corners", pts)


def classify_completeness(c: CornerSet) -> str:
    return "incomplete" if len(c.corners) < MIN_CORNERS else "complete"


def _ordered(c: CornerSet):
    # top two by y, then each pair left-to-right
    pts = sorted(c.corners, key=lambda p: (p[1], p[0]))
    tl, tr = sorted(pts[:2])
    bl, br = sorted(pts[2:])
    return tl, tr, bl, br


def _direction(p, q) -> float:
    return math.degrees(math.atan2(q[1] - p[1], q[0] - p[0]))


def _line_angle(a1, a2, b1, b2) -> float:
    """Acute angle between two undirected lines, in degrees."""
    d = abs(_direction(a1, a2) - _direction(b1, b2)) % 180.0
    return min(d, 180.0 - d)


def skew_angle(c: CornerSet, edges: str = "top_bottom") -> float | None:
    """Angle between opposite page edges; ``None`` unless four corners exist.

    ``edges="top_bottom"`` compares the top and bottom edges,
    ``"left_right"`` the left and right edges.
    """
    if len(c.corners) != 4:
        return None
    tl, tr, bl, br = _ordered(c)
    if edges == "top_bottom":
        return _line_angle(tl, tr, bl, br)
    if edges == "left_right":
        return _line_angle(tl, bl, tr, br)
    raise ValueError(f"unknown edge pair {edges!r}")


def classify_skew(c: CornerSet, edges: str = "top_bottom") -> str:
    angle = skew_angle(c, edges)
    if angle is None:
        return "straight"
    return "skewed" if angle > SKEW_THRESHOLD_DEG + _ANGLE_TOL else "straight"


def classify_quality(c: CornerSet, edges: str = "top_bottom") -> str:
    if classify_completeness(c) == "incomplete" or classify_skew(c, edges) == "skewed":
        return "Low"
    return "High"
