"""Scoring of model predictions against a QA bank.

Soft accuracy credits a prediction that contains the gold answer after
normalization; ROUGE-L is the F1 of the longest common token subsequence,
with CJK characters as single tokens and whitespace-split Latin runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .annotation import normalize_text
from .qa import ABSTAIN, QaItem

ELECTRONIC_TYPES = {"screenshot", "scanned_pdf"}

# task group -> (reports soft accuracy, reports ROUGE-L)
GROUP_METRICS = {
    "Entity": (True, True),
    "Table": (True, True),
    "TableNR": (True, False),
    "Reason-MC": (True, False),
    "Reason-SA": (True, True),
    "Custom": (True, True),
}


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    qa_id: str
    text: str


def read_predictions(text: str) -> dict[str, str]:
    preds: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            preds[rec["qa_id"]] = rec.get("text") or ""
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ScoreError(f"bad prediction record on line {lineno}: {exc}") from exc
    return preds


# ---------------------------------------------------------------- metrics


def soft_accuracy(pred: str, gold: str) -> int:
    return int(normalize_text(gold) in normalize_text(pred))


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0x20000 <= cp <= 0x2FA1F
        or 0xF900 <= cp <= 0xFAFF
        or 0x3000 <= cp <= 0x30FF  # CJK punctuation, kana
        or 0xAC00 <= cp <= 0xD7AF
        or 0xFF00 <= cp <= 0xFFEF
    )


def tokenize(s: str) -> list[str]:
    tokens: list[str] = []
    word: list[str] = []
    for ch in normalize_text(s):
        if ch.isspace() or _is_cjk(ch):
            if word:
                tokens.append("".join(word))
                word = []
            if not ch.isspace():
                tokens.append(ch)
        else:
            word.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(pred: str, gold: str) -> float:
    p, g = tokenize(pred), tokenize(gold)
    lcs = lcs_length(p, g)
    if lcs == 0:
        return 0.0
    # F1 of P = lcs/|p| and R = lcs/|g|, folded into one division so the
    # result is the correctly rounded value of the exact ratio
    return 2 * lcs / (len(p) + len(g))


# ---------------------------------------------------------------- aggregation


def task_group(item: QaItem) -> str:
    if item.task == "Reason":
        return f"Reason-{item.subtask}"
    return item.task


@dataclass
class Cell:
    n: int = 0
    soft_sum: float = 0.0
    rouge_sum: float = 0.0
    rouge_n: int = 0

    def add(self, soft: int, rouge: float | None):
        self.n += 1
        self.soft_sum += soft
        if rouge is not None:
            self.rouge_sum += rouge
            self.rouge_n += 1

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "soft_accuracy": self.soft_sum / self.n if self.n else None,
            "rouge_l": self.rouge_sum / self.rouge_n if self.rouge_n else None,
        }


@dataclass
class ScoreReport:
    tasks: dict[str, Cell] = field(default_factory=dict)
    subtasks: dict[str, Cell] = field(default_factory=dict)
    strata: dict[str, dict[str, dict[str, Cell]]] = field(default_factory=dict)
    unanswerable_total: int = 0
    answered_anyway: int = 0

    def to_dict(self) -> dict:
        return {
            "tasks": {k: c.to_dict() for k, c in sorted(self.tasks.items())},
            "subtasks": {k: c.to_dict() for k, c in sorted(self.subtasks.items())},
            "strata": {
                axis: {
                    level: {k: c.to_dict() for k, c in sorted(cells.items())}
                    for level, cells in sorted(levels.items())
                }
                for axis, levels in sorted(self.strata.items())
            },
            "hallucination": {
                "unanswerable_total": self.unanswerable_total,
                "answered_anyway": self.answered_anyway,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _image_type_level(meta: Mapping | None) -> str:
    if not meta or "image_type" not in meta:
        return "Unknown"
    return "Electronic" if meta["image_type"] in ELECTRONIC_TYPES else "Photo"


def score_run(
    bank: Sequence[QaItem],
    predictions: Mapping[str, str] | Iterable[Prediction],
    strata_meta: Mapping[str, Mapping] | None = None,
) -> ScoreReport:
    """Score every bank item; a missing prediction scores as the empty string.

    ``strata_meta`` maps image id to ``{"image_type": ..., "quality": ...}``.
    """
    if not isinstance(predictions, Mapping):
        predictions = {p.qa_id: p.text for p in predictions}
    known = {item.qa_id for item in bank}
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise ScoreError(f"predictions for unknown qa_ids: {', '.join(unknown)}")
    strata_meta = strata_meta or {}

    report = ScoreReport()
    report.strata = {"image_type": {}, "quality": {}, "difficulty": {}}
    for item in bank:
        pred = predictions.get(item.qa_id, "")
        group = task_group(item)
        _, with_rouge = GROUP_METRICS.get(group, (True, True))
        soft = soft_accuracy(pred, item.answer)
        rouge = rouge_l(pred, item.answer) if with_rouge else None
        if not item.answerable:
            report.unanswerable_total += 1
            report.answered_anyway += 1 - soft

        report.tasks.setdefault(group, Cell()).add(soft, rouge)
        report.subtasks.setdefault(f"{item.task}/{item.subtask}", Cell()).add(soft, rouge)
        meta = strata_meta.get(item.image_id)
        levels = {
            "image_type": _image_type_level(meta),
            "quality": (meta or {}).get("quality", "Unknown"),
            "difficulty": item.difficulty,
        }
        for axis, level in levels.items():
            report.strata[axis].setdefault(level, {}).setdefault(group, Cell()).add(soft, rouge)
    return report


def hallucination_stats(
    bank: Sequence[QaItem], predictions: Mapping[str, str]
) -> dict[str, int]:
    total = answered = 0
    for item in bank:
        if item.answerable:
            continue
        total += 1
        answered += 1 - soft_accuracy(predictions.get(item.qa_id, ""), ABSTAIN)
    return {"unanswerable_total": total, "answered_anyway": answered}


def format_report(report: ScoreReport) -> str:
    """Aligned plain-text table: one row per task group and subtask."""

    def fmt(v):
        return "-" if v is None else f"{v:.3f}"

    rows = [("task", "n", "soft_acc", "rouge_l")]
    for name, cell in sorted(report.tasks.items()):
        d = cell.to_dict()
        rows.append((name, str(d["n"]), fmt(d["soft_accuracy"]), fmt(d["rouge_l"])))
    for name, cell in sorted(report.subtasks.items()):
        d = cell.to_dict()
        rows.append(("  " + name, str(d["n"]), fmt(d["soft_accuracy"]), fmt(d["rouge_l"])))
    for axis, levels in sorted(report.strata.items()):
        for level, cells in sorted(levels.items()):
            for name, cell in sorted(cells.items()):
                d = cell.to_dict()
                rows.append(
                    (f"{axis}={level} {name}", str(d["n"]), fmt(d["soft_accuracy"]), fmt(d["rouge_l"]))
                )
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = [
        "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        for r in rows
    ]
    lines.append(
        f"hallucination: {report.answered_anyway}/{report.unanswerable_total} unanswerable items answered"
    )
    return "\n".join(lines) + "\n"
