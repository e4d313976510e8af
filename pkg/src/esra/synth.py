"""Synthetic report layouts rendered to OCR segments with known ground truth.

Rendering is monospace: every character is ``char_width`` pixels wide and
every cell starts on a character-grid column, so the noiseless rendering
can be restored exactly. Noise draws come from their own random stream and
are always consumed, so two specs differing only in noise magnitude share
the same layout and the same underlying random offsets.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, replace
from typing import Iterator, Mapping

from .annotation import (
    KeyValuePair,
    Quadruplet,
    ReportAnnotation,
    expected_flag,
)
from .ocr import BBox, OcrDocument, TextSegment
from .restore import EsraParams, RestoredText, restore

VOCAB = (
    "Hb", "WBC", "RBC", "PLT", "ALT", "AST", "PSA", "Cr", "BUN", "eGFR", "HCT",
    "血红蛋白", "白细胞", "红细胞", "血小板", "肌酐", "尿素", "尿酸", "前列腺",
    "g/L", "mmol/L", "μmol/L", "%", "10^9/L", "U/L", "阴性", "阳性",
    "0.5", "12.3", "130", "3.5", "9.5", "4.02", "+", "-", "↑", "↓",
)

LAB_ITEMS = (
    ("Hb", "115-150", (80, 170)),
    ("WBC", "3.5-9.5", (1.5, 15)),
    ("RBC", "4.3-5.8", (3.0, 6.5)),
    ("PLT", "125-350", (60, 480)),
    ("ALT", "9-50", (4, 120)),
    ("AST", "15-40", (8, 90)),
    ("Cr", "57-97", (40, 200)),
    ("BUN", "3.1-8.0", (1.5, 14)),
    ("K", "3.5-5.3", (2.8, 6.5)),
    ("Na", "137-147", (128, 155)),
    ("Glu", "3.9-6.1", (3.0, 11)),
    ("PSA", "<4", (0.2, 12)),
    ("TG", "<1.7", (0.4, 4)),
    ("eGFR", ">90", (20, 130)),
    ("UA", "208-428", (150, 600)),
    ("尿蛋白", "阴性", None),
    ("尿潜血", "阴性", None),
    ("HCT", "40-50", (30, 58)),
)

KV_FIELDS = (
    ("Name", ("张伟", "王芳", "李娜", "刘洋", "陈静")),
    ("Age", ("34", "45", "58", "62", "71")),
    ("Date", ("2023-03-14", "2023-06-02", "2023-09-21", "2023-11-08")),
    ("Clinical Diagnosis", ("血尿", "前列腺增生", "肾囊肿", "尿路感染")),
)


@dataclass(frozen=True)
class SynthSpec:
    rows: int = 5
    columns: int = 3
    cell_len_min: int = 2
    cell_len_max: int = 8
    line_height: float = 20.0
    column_gap: float = 20.0  # pixels; rounded to whole characters
    char_width: float = 10.0
    y_jitter: float = 0.0  # fraction of line height
    x_jitter: float = 0.0  # pixels
    split_probability: float = 0.0
    seed: int = 0
    layout: str = "grid"  # "grid" or "lab"
    image_type: str = "scanned_pdf"

    def __post_init__(self):
        if self.rows < 1 or self.columns < 1:
            raise ValueError("rows and columns must be >= 1")
        if not 1 <= self.cell_len_min <= self.cell_len_max:
            raise ValueError("need 1 <= cell_len_min <= cell_len_max")
        if self.line_height <= 0 or self.char_width <= 0 or self.column_gap < 0:
            raise ValueError("line_height and char_width must be > 0, column_gap >= 0")
        for name in ("y_jitter", "split_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.x_jitter < 0:
            raise ValueError("x_jitter must be >= 0")
        if self.layout not in ("grid", "lab"):
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def image_id(self) -> str:
        return f"synth-{self.layout}-{self.seed}"


@dataclass(frozen=True)
class GroundTruth:
    lines: tuple[int, ...]  # per document segment
    columns: tuple[int, ...]
    true_x0: tuple[float, ...]  # noiseless left edge, pixels
    char_width: float
    text: str  # canonical monospace rendering
    annotation: ReportAnnotation | None = None

    def to_dict(self) -> dict:
        d = {
            "lines": list(self.lines),
            "columns": list(self.columns),
            "true_x0": list(self.true_x0),
            "char_width": self.char_width,
            "text": self.text,
        }
        if self.annotation is not None:
            d["annotation"] = self.annotation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruth":
        ann = d.get("annotation")
        return cls(
            tuple(d["lines"]), tuple(d["columns"]), tuple(d["true_x0"]),
            d["char_width"], d["text"],
            ReportAnnotation.from_dict(ann) if ann else None,
        )


def _cell_text(rng: random.Random, length: int) -> str:
    out = ""
    while len(out) < length:
        out += rng.choice(VOCAB)
    return out[:length]


def _lab_rows(spec: SynthSpec, rng: random.Random):
    kv = []
    rows: list[list[str]] = []
    for key, values in KV_FIELDS[:3]:
        value = rng.choice(values)
        kv.append(KeyValuePair(key, value))
        rows.append([key, value])
    n = min(spec.rows, len(LAB_ITEMS))
    quads = []
    for item, ref, span in rng.sample(LAB_ITEMS, n):
        if span is None:
            result = rng.choice(("阴性", "阴性", "阳性"))
        else:
            result = f"{rng.uniform(*span):.1f}"
        quads.append(Quadruplet(item, result, ref, expected_flag(result, ref)))
        rows.append([item, result, ref])
    return rows, kv, quads


def generate(spec: SynthSpec, facts=None) -> tuple[OcrDocument, GroundTruth]:
    """Render one synthetic document. ``facts`` (a fact base) is only used by
    the lab layout to attach context references to its annotation."""
    layout_rng = random.Random(f"{spec.seed}/layout")
    noise_rng = random.Random(f"{spec.seed}/noise")
    cw, lh = spec.char_width, spec.line_height

    annotation = None
    if spec.layout == "lab":
        rows, kv, quads = _lab_rows(spec, layout_rng)
        refs = {}
        if facts is not None:
            lab_facts = sorted(
                (f for f in facts if f.report_class == "laboratory"), key=lambda f: f.id
            )
            if lab_facts:
                refs = {"diagnosis": (layout_rng.choice(lab_facts).id,)}
        annotation = ReportAnnotation(
            image_id=spec.image_id, report_class="laboratory", kv_pairs=kv,
            quadruplets=quads, context_refs=refs, quality="High",
            image_type=spec.image_type, table_count=len(quads),
        )
    else:
        rows = [
            [
                _cell_text(layout_rng, layout_rng.randint(spec.cell_len_min, spec.cell_len_max))
                for _ in range(spec.columns)
            ]
            for _ in range(spec.rows)
        ]

    n_cols = max(len(r) for r in rows)
    col_width = [max(len(r[c]) for r in rows if c < len(r)) for c in range(n_cols)]
    gap_chars = max(1, round(spec.column_gap / cw))
    starts = [0]
    for c in range(n_cols - 1):
        starts.append(starts[-1] + col_width[c] + gap_chars)

    margin = 2 * lh + spec.x_jitter
    canonical = []
    cells = []  # (text, row, col, true_x0, x0, x1, y0, y1)
    for r, row in enumerate(rows):
        chars = [" "] * (starts[len(row) - 1] + len(row[-1]))
        for c, text in enumerate(row):
            chars[starts[c] : starts[c] + len(text)] = text
            # four draws per cell whatever the noise levels, keeping streams aligned
            u_cell_y, u_x = noise_rng.random(), noise_rng.random()
            u_split, u_cut = noise_rng.random(), noise_rng.random()
            dy = (2 * u_cell_y - 1) * spec.y_jitter * lh
            dx = (2 * u_x - 1) * spec.x_jitter
            x0 = margin + starts[c] * cw
            y0 = margin + r * lh
            if u_split < spec.split_probability and len(text) >= 2:
                k = 1 + int(u_cut * (len(text) - 1))
                parts = [(text[:k], 0), (text[k:], k)]
            else:
                parts = [(text, 0)]
            for part, offset in parts:
                px0 = x0 + offset * cw
                cells.append(
                    (part, r, c, px0, px0 + dx, px0 + dx + len(part) * cw, y0 + dy, y0 + dy + lh)
                )
        canonical.append("".join(chars).rstrip())

    order = list(range(len(cells)))
    layout_rng.shuffle(order)
    segments = []
    lines, cols, true_x0 = [], [], []
    for i in order:
        text, r, c, tx0, x0, x1, y0, y1 = cells[i]
        segments.append(TextSegment(text, BBox(x0, x1, y0, y1)))
        lines.append(r)
        cols.append(c)
        true_x0.append(tx0)

    doc = OcrDocument(spec.image_id, spec.image_type, tuple(segments))
    truth = GroundTruth(tuple(lines), tuple(cols), tuple(true_x0), cw, "\n".join(canonical), annotation)
    return doc, truth


def corpus_specs(base: SynthSpec, n: int, rows=None, columns=None) -> list[SynthSpec]:
    """Specs for ``n`` documents with seeds ``base.seed + i``. ``rows`` /
    ``columns`` may be ``(lo, hi)`` ranges sampled per document."""
    specs = []
    for i in range(n):
        rng = random.Random(f"{base.seed}/corpus/{i}")
        spec = replace(base, seed=base.seed + i)
        if rows is not None:
            spec = replace(spec, rows=rng.randint(*rows))
        if columns is not None:
            spec = replace(spec, columns=rng.randint(*columns))
        specs.append(spec)
    return specs


def corpus(base: SynthSpec, n: int, rows=None, columns=None, facts=None) -> Iterator[tuple[OcrDocument, GroundTruth]]:
    for spec in corpus_specs(base, n, rows, columns):
        yield generate(spec, facts)


def spec_from_dict(d: Mapping) -> tuple[SynthSpec, tuple | None, tuple | None]:
    """Parse a spec file where ``rows``/``columns`` may be ``[lo, hi]``."""
    d = dict(d)
    rows = d.pop("rows", None)
    cols = d.pop("columns", None)
    row_range = tuple(rows) if isinstance(rows, list) else None
    col_range = tuple(cols) if isinstance(cols, list) else None
    if isinstance(rows, int):
        d["rows"] = rows
    if isinstance(cols, int):
        d["columns"] = cols
    return SynthSpec(**d), row_range, col_range


def spec_to_json(spec: SynthSpec) -> str:
    return json.dumps(asdict(spec), indent=1)


# ---------------------------------------------------------------- fidelity


@dataclass(frozen=True)
class Fidelity:
    line_accuracy: float
    column_alignment_error: float
    n_segments: int


def measure_fidelity(restored: RestoredText, truth: GroundTruth) -> Fidelity:
    """Share of segments landing on their true line, and mean absolute
    difference between restored column and true column.

    The true column of a segment is its noiseless offset from the left edge
    of its true line, in units of the estimated character width.
    """
    n = len(truth.lines)
    origin: dict[int, float] = {}
    for ln, x in zip(truth.lines, truth.true_x0):
        origin[ln] = min(origin.get(ln, x), x)
    hits = 0
    err = 0.0
    for i in range(n):
        line, col = restored.line_map[i]
        hits += line == truth.lines[i]
        expected = (truth.true_x0[i] - origin[truth.lines[i]]) / restored.char_width
        err += abs(col - expected)
    return Fidelity(hits / n, err / n, n)


def corpus_fidelity(
    base: SynthSpec, n: int, params: EsraParams, rows=None, columns=None
) -> Fidelity:
    """Fidelity pooled over every segment of an ``n``-document corpus."""
    hits = err = 0.0
    total = 0
    for doc, truth in corpus(base, n, rows, columns):
        fid = measure_fidelity(restore(doc, params), truth)
        hits += fid.line_accuracy * fid.n_segments
        err += fid.column_alignment_error * fid.n_segments
        total += fid.n_segments
    return Fidelity(hits / total, err / total, total)
