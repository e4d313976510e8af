"""Report ground-truth model: key-value pairs, lab-table quadruplets, clinical
context facts and the synonym schema, plus reference-range parsing."""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

REPORT_CLASSES = ("laboratory", "diagnostic")
FACT_CLASSES = ("laboratory", "clinical")
CONTEXT_TYPES = (
    "Exam-Disease",
    "Exam-Status",
    "Disease-Status",
    "Disease-Advice",
    "Exam",
    "Disease-Exam",
    "Disease-Treatment",
)
CONTEXT_CATEGORIES = ("diagnosis", "status", "advice")
QUALITY_LEVELS = ("High", "Low")


class Flag(str, Enum):
    NORMAL = "Normal"
    HIGH = "High"
    LOW = "Low"
    UNDETERMINED = "Undetermined"


class RangeKind(str, Enum):
    CLOSED = "closed_interval"
    LOWER_ONLY = "lower_only"
    UPPER_ONLY = "upper_only"
    QUALITATIVE = "qualitative"


class RangeParseError(ValueError):
    pass


class SchemaError(ValueError):
    pass


def normalize_text(s: str) -> str:
    """NFKC (folds full-width forms), trim, collapse whitespace, casefold."""
    s = unicodedata.normalize("NFKC", s)
    return " ".join(s.split()).casefold()


# ---------------------------------------------------------------- ranges

_NUM = r"[+-]?\d+(?:\.\d+)?"
_CLOSED = re.compile(rf"^({_NUM})\s*(?:-|–|—|~|〜)\s*({_NUM})$")
_UPPER = re.compile(rf"^(?:<=|≤|<)\s*({_NUM})$")
_LOWER = re.compile(rf"^(?:>=|≥|>)\s*({_NUM})$")
_NUMBER = re.compile(rf"^{_NUM}$")


def _prep_numeric(s: str) -> str:
    s = unicodedata.normalize("NFKC", s).strip()
    return re.sub(r"(?<=\d),(?=\d)", ".", s)


def parse_number(s: str) -> float | None:
    """Parse a printed lab value; ``None`` when it is not a plain number.
    Trailing or leading arrow markers (↑/↓) are ignored."""
    s = _prep_numeric(s).strip("↑↓ ")
    if _NUMBER.match(s):
        return float(s)
    return None


@dataclass(frozen=True)
class RangeSpec:
    kind: RangeKind
    lo: float | None = None
    hi: float | None = None
    qualitative_expected: str | None = None

    def __post_init__(self):
        if self.kind is RangeKind.CLOSED:
            if self.lo is None or self.hi is None or self.lo > self.hi:
                raise ValueError("closed interval needs lo <= hi")
        elif self.kind is RangeKind.LOWER_ONLY and self.lo is None:
            raise ValueError("lower_only needs lo")
        elif self.kind is RangeKind.UPPER_ONLY and self.hi is None:
            raise ValueError("upper_only needs hi")
        elif self.kind is RangeKind.QUALITATIVE and not self.qualitative_expected:
            raise ValueError("qualitative range needs an expected token")


def parse_range(raw: str) -> RangeSpec:
    s = _prep_numeric(raw)
    if not s:
        raise RangeParseError("empty range")
    m = _CLOSED.match(s)
    if m:
        lo, hi = float(m.group(1)), float(m.group(2))
        if lo > hi:
            raise RangeParseError(f"inverted interval {raw!r}")
        return RangeSpec(RangeKind.CLOSED, lo=lo, hi=hi)
    m = _UPPER.match(s)
    if m:
        return RangeSpec(RangeKind.UPPER_ONLY, hi=float(m.group(1)))
    m = _LOWER.match(s)
    if m:
        return RangeSpec(RangeKind.LOWER_ONLY, lo=float(m.group(1)))
    if not any(ch.isdigit() for ch in s):
        return RangeSpec(RangeKind.QUALITATIVE, qualitative_expected=normalize_text(s))
    raise RangeParseError(f"unrecognised range {raw!r}")


def check_abnormal(result: str, spec: RangeSpec) -> Flag:
    """Flag a result against a range. Bounds are inclusive.

    A qualitative mismatch is reported as ``Flag.HIGH``; callers can tell it
    apart from a numeric high by ``spec.kind``.
    """
    if spec.kind is RangeKind.QUALITATIVE:
        return Flag.NORMAL if normalize_text(result) == spec.qualitative_expected else Flag.HIGH
    v = parse_number(result)
    if v is None:
        return Flag.UNDETERMINED
    if spec.lo is not None and v < spec.lo:
        return Flag.LOW
    if spec.hi is not None and v > spec.hi:
        return Flag.HIGH
    return Flag.NORMAL


def expected_flag(result: str, raw_range: str) -> Flag:
    """Flag implied by a printed range; Undetermined when the range is empty
    or unreadable."""
    try:
        spec = parse_range(raw_range)
    except RangeParseError:
        return Flag.UNDETERMINED
    return check_abnormal(result, spec)


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class KeyValuePair:
    key: str
    value: str
    missing: bool = False  # value intentionally left blank
    canonical_key: str | None = None


@dataclass(frozen=True)
class Quadruplet:
    item: str
    result: str
    range: str
    flag: Flag

    def __post_init__(self):
        object.__setattr__(self, "flag", Flag(self.flag))


@dataclass(frozen=True)
class ContextFact:
    id: str
    title: str
    report_class: str
    context_type: str
    description: str

    def __post_init__(self):
        if self.report_class not in FACT_CLASSES:
            raise ValueError(f"unknown report_class {self.report_class!r}")
        if self.context_type not in CONTEXT_TYPES:
            raise ValueError(f"unknown context_type {self.context_type!r}")


class FactBase:
    """Read-only collection of context facts keyed by id."""

    def __init__(self, facts: Iterable[ContextFact]):
        self.facts: tuple[ContextFact, ...] = tuple(facts)
        self._by_id: dict[str, ContextFact] = {}
        titles: set[str] = set()
        for f in self.facts:
            if f.id in self._by_id:
                raise ValueError(f"duplicate fact id {f.id!r}")
            if f.title in titles:
                raise ValueError(f"duplicate fact title {f.title!r}")
            self._by_id[f.id] = f
            titles.add(f.title)

    def __len__(self):
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)

    def __contains__(self, fact_id):
        return fact_id in self._by_id

    def __getitem__(self, fact_id: str) -> ContextFact:
        return self._by_id[fact_id]

    def by_title(self, title: str) -> ContextFact | None:
        for f in self.facts:
            if f.title == title:
                return f
        return None

    @classmethod
    def from_json(cls, data: str | bytes) -> "FactBase":
        return cls(ContextFact(**rec) for rec in json.loads(data))

    @classmethod
    def load(cls, path: str | Path) -> "FactBase":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        return json.dumps([f.__dict__ for f in self.facts], ensure_ascii=False, indent=1)


def sample_fact_base() -> FactBase:
    """Twenty-title fact base bundled for fixtures and demos."""
    text = resources.files("esra").joinpath("data/sample_facts.json").read_text("utf-8")
    return FactBase.from_json(text)


@dataclass(frozen=True)
class ReportAnnotation:
    image_id: str
    report_class: str
    kv_pairs: tuple[KeyValuePair, ...] = ()
    quadruplets: tuple[Quadruplet, ...] = ()
    context_refs: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    quality: str = "High"
    image_type: str = "scanned_pdf"
    table_count: int | None = None  # item count declared by the annotator

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id is empty")
        if self.report_class not in REPORT_CLASSES:
            raise ValueError(f"unknown report_class {self.report_class!r}")
        if self.quality not in QUALITY_LEVELS:
            raise ValueError(f"unknown quality {self.quality!r}")
        object.__setattr__(self, "kv_pairs", tuple(self.kv_pairs))
        object.__setattr__(self, "quadruplets", tuple(self.quadruplets))
        refs = {c: tuple(self.context_refs.get(c, ())) for c in CONTEXT_CATEGORIES}
        unknown = set(self.context_refs) - set(CONTEXT_CATEGORIES)
        if unknown:
            raise ValueError(f"unknown context categories {sorted(unknown)}")
        object.__setattr__(self, "context_refs", refs)
        if self.report_class == "laboratory" and not self.kv_pairs and not self.quadruplets:
            raise ValueError("laboratory report needs key-value pairs or table rows")

    def all_context_ids(self) -> list[str]:
        return [i for c in CONTEXT_CATEGORIES for i in self.context_refs[c]]

    def to_dict(self) -> dict:
        kv = []
        for p in self.kv_pairs:
            rec = {"key": p.key, "value": p.value}
            if p.missing:
                rec["missing"] = True
            kv.append(rec)
        out = {
            "image_id": self.image_id,
            "report_class": self.report_class,
            "kv": kv,
            "table": [
                {"item": q.item, "result": q.result, "range": q.range, "flag": q.flag.value}
                for q in self.quadruplets
            ],
            "context_refs": {c: list(self.context_refs[c]) for c in CONTEXT_CATEGORIES},
            "quality": self.quality,
            "image_type": self.image_type,
        }
        if self.table_count is not None:
            out["table_count"] = self.table_count
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ReportAnnotation":
        return cls(
            image_id=obj["image_id"],
            report_class=obj["report_class"],
            kv_pairs=tuple(
                KeyValuePair(r["key"], r["value"], bool(r.get("missing", False)))
                for r in obj.get("kv", [])
            ),
            quadruplets=tuple(
                Quadruplet(r["item"], r["result"], r["range"], Flag(r["flag"]))
                for r in obj.get("table", [])
            ),
            context_refs={c: tuple(v) for c, v in obj.get("context_refs", {}).items()},
            quality=obj.get("quality", "High"),
            image_type=obj.get("image_type", "scanned_pdf"),
            table_count=obj.get("table_count"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)

    @classmethod
    def from_json(cls, data: str | bytes) -> "ReportAnnotation":
        return cls.from_dict(json.loads(data))


def load_annotations(directory: str | Path) -> list[ReportAnnotation]:
    """Every ``*.json`` annotation in a directory, sorted by image id."""
    anns = []
    for p in sorted(Path(directory).glob("*.json")):
        try:
            anns.append(ReportAnnotation.from_json(p.read_text(encoding="utf-8")))
        except KeyError as exc:
            raise ValueError(f"{p.name}: missing field {exc.args[0]!r}") from exc
    return sorted(anns, key=lambda a: a.image_id)


# ---------------------------------------------------------------- synonyms


class Canonical(NamedTuple):
    key: str
    mapped: bool


class SynonymSchema:
    """Canonical term -> synonyms. Every canonical term is its own synonym and
    no synonym may belong to two canonical terms (compared after
    normalization)."""

    def __init__(self, entries: Mapping[str, Sequence[str]]):
        self.entries: dict[str, list[str]] = {}
        self._index: dict[str, str] = {}
        for canonical, synonyms in entries.items():
            terms = [canonical] + [s for s in synonyms if s != canonical]
            self.entries[canonical] = terms
            for term in terms:
                norm = normalize_text(term)
                owner = self._index.get(norm)
                if owner is not None and owner != canonical:
                    raise SchemaError(
                        f"synonym {term!r} maps to both {owner!r} and {canonical!r}"
                    )
                self._index[norm] = canonical

    def lookup(self, key: str) -> str | None:
        return self._index.get(normalize_text(key))

    def synonyms(self, canonical: str) -> list[str]:
        return list(self.entries.get(canonical, [canonical]))

    def to_json(self) -> str:
        return json.dumps(
            {c: terms[1:] for c, terms in self.entries.items()}, ensure_ascii=False, indent=1
        )

    @classmethod
    def from_json(cls, data: str | bytes) -> "SynonymSchema":
        return cls(json.loads(data))

    @classmethod
    def load(cls, path: str | Path) -> "SynonymSchema":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def default_schema() -> SynonymSchema:
    text = resources.files("esra").joinpath("data/synonyms_default.json").read_text("utf-8")
    return SynonymSchema.from_json(text)


def canonicalize(key: str, schema: SynonymSchema) -> Canonical:
    canonical = schema.lookup(key)
    if canonical is None:
        return Canonical(key, False)
    return Canonical(canonical, True)
