"""Seeded question-answer bank generation from report annotations.

Five task families are produced: Entity (key-value lookups), Table (lab
rows), TableNR (numeric reasoning over reference ranges), Reason (clinical
multiple choice and short answer against a fact base) and Custom
(template-driven, e.g. report summaries).
"""

from __future__ import annotations

import itertools
import json
import logging
import random
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

from .annotation import (
    CONTEXT_CATEGORIES,
    FactBase,
    Flag,
    RangeKind,
    RangeParseError,
    ReportAnnotation,
    SynonymSchema,
    canonicalize,
    normalize_text,
    parse_range,
)
from .similarity import BigramCosine, SimilarityProvider

logger = logging.getLogger(__name__)

ABSTAIN = "UNANSWERABLE"
N_OPTIONS = 4
TASKS = ("Entity", "Table", "TableNR", "Reason", "Custom")
MULTI_SUBTASKS = {"Multi", "MultiRow", "MultiAbnormal"}
SINGLE_SUBTASKS = {"Single", "SingleCell", "SingleRow", "Comparison"}


class QaError(ValueError):
    pass


class TemplateError(QaError):
    def __init__(self, slot: str, reason: str):
        super().__init__(f"cannot fill slot {{{slot}}}: {reason}")
        self.slot = slot


@dataclass(frozen=True)
class QaItem:
    qa_id: str
    image_id: str
    task: str
    subtask: str
    question: str
    answer: str
    answer_type: str
    answerable: bool = True
    options: tuple[str, ...] | None = None
    correct_index: int | None = None
    context_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
        object.__setattr__(self, "context_ids", tuple(self.context_ids))
        is_mc = self.task == "Reason" and self.subtask == "MC"
        if is_mc != (self.options is not None):
            raise ValueError("options are required for, and only for, Reason/MC items")
        if self.options is not None:
            if len(self.options) != N_OPTIONS or len(set(self.options)) != N_OPTIONS:
                raise ValueError("MC items need four distinct options")
            if self.correct_index is None or not 0 <= self.correct_index < N_OPTIONS:
                raise ValueError("correct_index out of range")
        if not self.answerable and self.answer != ABSTAIN:
            raise ValueError("unanswerable items must carry the abstention token")

    @property
    def difficulty(self) -> str:
        if self.subtask in MULTI_SUBTASKS:
            return "Multi"
        if self.subtask in SINGLE_SUBTASKS:
            return "Single"
        return "NA"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["options"] = list(self.options) if self.options is not None else None
        d["context_ids"] = list(self.context_ids)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "QaItem":
        return cls(**{k: d.get(k) for k in d if k in cls.__dataclass_fields__})


def write_bank(items: Iterable[QaItem]) -> str:
    return "".join(item.to_json() + "\n" for item in items)


def read_bank(text: str) -> list[QaItem]:
    return [QaItem.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------- vocabulary

# slot -> (schema canonical term, default wording)
VOCAB = {
    "result": ("Result", "result"),
    "range": ("Range", "reference range"),
    "normal_range": ("Range", "normal range"),
    "abnormal": (None, "abnormal indicators"),
}


def vocab(slot: str, schema: SynonymSchema | None, rng: random.Random) -> str:
    canonical, default = VOCAB[slot]
    pool = [default]
    if schema is not None and canonical is not None and canonical in schema.entries:
        for term in schema.synonyms(canonical):
            term = term.lower()
            if term not in pool:
                pool.append(term)
    return rng.choice(pool)


def render_key(key: str, schema: SynonymSchema | None, rng: random.Random) -> str:
    """A seeded synonym of the key's canonical term; unmapped keys verbatim."""
    if schema is None:
        return key
    canonical, mapped = canonicalize(key, schema)
    if not mapped:
        return key
    return rng.choice(schema.synonyms(canonical))


class _Ids:
    def __init__(self, image_id: str):
        self.image_id = image_id
        self.counts: dict[tuple[str, str], int] = {}

    def __call__(self, task: str, subtask: str) -> str:
        n = self.counts.get((task, subtask), 0)
        self.counts[(task, subtask)] = n + 1
        return f"{self.image_id}:{task}:{subtask}:{n:03d}"


# ---------------------------------------------------------------- Entity


def generate_entity(
    ann: ReportAnnotation,
    schema: SynonymSchema | None,
    rng: random.Random,
    ids: _Ids | None = None,
) -> list[QaItem]:
    ids = ids or _Ids(ann.image_id)
    pairs = [kv for kv in ann.kv_pairs if kv.key.strip() and kv.value.strip()]
    items = []
    for kv in pairs:
        key = render_key(kv.key, schema, rng)
        items.append(
            QaItem(
                ids("Entity", "Single"), ann.image_id, "Entity", "Single",
                f"What is the {key}?", f"{key} is {kv.value}.", "SS",
            )
        )
    for a, b in itertools.combinations(pairs, 2):
        ka, kb = render_key(a.key, schema, rng), render_key(b.key, schema, rng)
        items.append(
            QaItem(
                ids("Entity", "Multi"), ann.image_id, "Entity", "Multi",
                f"What are the {ka} and {kb}?", f"{a.value}; {b.value}", "MS",
            )
        )
    return items


# ---------------------------------------------------------------- Table


def default_pair_count(n_rows: int) -> int:
    return min(n_rows * (n_rows - 1) // 2, 2 * n_rows)


def generate_table(
    ann: ReportAnnotation,
    schema: SynonymSchema | None,
    rng: random.Random,
    pair_count: int | None = None,
    ids: _Ids | None = None,
) -> list[QaItem]:
    ids = ids or _Ids(ann.image_id)
    rows = [q for q in ann.quadruplets if q.item.strip() and q.result.strip()]
    items = []
    for q in rows:
        res = vocab("result", schema, rng)
        items.append(
            QaItem(
                ids("Table", "SingleCell"), ann.image_id, "Table", "SingleCell",
                f"What is the {res} of {q.item}?", f"The {res} of {q.item} is {q.result}.", "SS",
            )
        )
    for q in rows:
        if not q.range.strip():
            continue
        res, rng_word = vocab("result", schema, rng), vocab("range", schema, rng)
        items.append(
            QaItem(
                ids("Table", "SingleRow"), ann.image_id, "Table", "SingleRow",
                f"What is the {res} and {rng_word} of {q.item}?",
                f"The {res} of {q.item} is {q.result}, and the {rng_word} is {q.range}.",
                "MS",
            )
        )
    all_pairs = list(itertools.combinations(range(len(rows)), 2))
    m = default_pair_count(len(rows)) if pair_count is None else min(pair_count, len(all_pairs))
    for i, j in sorted(rng.sample(all_pairs, m)):
        a, b = rows[i], rows[j]
        res, rng_word = vocab("result", schema, rng), vocab("range", schema, rng)
        items.append(
            QaItem(
                ids("Table", "MultiRow"), ann.image_id, "Table", "MultiRow",
                f"What are the {res} and {rng_word} of {a.item} and {b.item} correspondingly?",
                f"{a.item}, {a.result}, {a.range}; {b.item}, {b.result}, {b.range};",
                "MS",
            )
        )
    return items


# ---------------------------------------------------------------- TableNR


def _verdict(flag: Flag, raw_range: str) -> str:
    if flag is Flag.NORMAL:
        return "it is normal"
    try:
        qualitative = parse_range(raw_range).kind is RangeKind.QUALITATIVE
    except RangeParseError:
        qualitative = False
    if qualitative:
        return "it is abnormal"
    return "it is abnormal (high)" if flag is Flag.HIGH else "it is abnormal (low)"


NONE_ABNORMAL = "There are no abnormal indicators in this report."


def generate_tablenr(
    ann: ReportAnnotation,
    schema: SynonymSchema | None,
    rng: random.Random,
    ids: _Ids | None = None,
) -> list[QaItem]:
    ids = ids or _Ids(ann.image_id)
    rows = [q for q in ann.quadruplets if q.item.strip() and q.result.strip()]
    items = []
    for q in rows:
        if q.flag is Flag.UNDETERMINED or not q.range.strip():
            continue
        res, nr = vocab("result", schema, rng), vocab("normal_range", schema, rng)
        items.append(
            QaItem(
                ids("TableNR", "Comparison"), ann.image_id, "TableNR", "Comparison",
                f"Is {q.item} within the {nr}?",
                f"The {res} of {q.item} is {q.result} and the {nr} is {q.range}, "
                f"hence {_verdict(q.flag, q.range)}.",
                "NS",
            )
        )
    if rows:
        abnormal = [q.item for q in rows if q.flag in (Flag.HIGH, Flag.LOW)]
        word = vocab("abnormal", schema, rng)
        answer = ", ".join(abnormal) + "." if abnormal else NONE_ABNORMAL
        items.append(
            QaItem(
                ids("TableNR", "MultiAbnormal"), ann.image_id, "TableNR", "MultiAbnormal",
                f"Is there any {word} in this report?", answer, "MS" if abnormal else "NS",
            )
        )
    return items


# ---------------------------------------------------------------- Custom


@dataclass(frozen=True)
class QaTemplate:
    task: str
    subtask: str
    question_pattern: str
    answer_pattern: str
    answer_type: str = "NS"


SUMMARY_TEMPLATE = QaTemplate(
    "Custom",
    "Summarization",
    "What key elements should be noticed in this medical report?",
    "There are {item_count} items in this report. {abnormal_count} are not in "
    "standard reference, which are {abnormal_items}.",
)

_SLOT = re.compile(r"\{([^{}]+)\}")
_TABLE_SLOTS = {"item_count", "abnormal_count", "abnormal_items", "items"}


def _slot_value(slot: str, ann: ReportAnnotation, schema: SynonymSchema | None) -> str:
    if slot in _TABLE_SLOTS:
        if not ann.quadruplets:
            raise TemplateError(slot, "the report has no table items")
        abnormal = [q.item for q in ann.quadruplets if q.flag in (Flag.HIGH, Flag.LOW)]
        if slot == "item_count":
            return str(len(ann.quadruplets))
        if slot == "abnormal_count":
            return str(len(abnormal))
        if slot == "abnormal_items":
            return ", ".join(abnormal) if abnormal else "none"
        return ", ".join(q.item for q in ann.quadruplets)
    if slot == "image_id":
        return ann.image_id
    if slot.startswith("kv:"):
        wanted = slot[3:]
        target = normalize_text(wanted)
        canon = canonicalize(wanted, schema).key if schema is not None else None
        for kv in ann.kv_pairs:
            if normalize_text(kv.key) == target or (
                canon is not None and canonicalize(kv.key, schema).key == canon
            ):
                if not kv.value.strip():
                    raise TemplateError(slot, "value is empty")
                return kv.value
        raise TemplateError(slot, f"no key {wanted!r} in the annotation")
    raise TemplateError(slot, "unknown slot")


def fill_template(pattern: str, ann: ReportAnnotation, schema: SynonymSchema | None = None) -> str:
    return _SLOT.sub(lambda m: _slot_value(m.group(1), ann, schema), pattern)


def generate_custom(
    ann: ReportAnnotation,
    template: QaTemplate = SUMMARY_TEMPLATE,
    schema: SynonymSchema | None = None,
    ids: _Ids | None = None,
) -> QaItem:
    ids = ids or _Ids(ann.image_id)
    question = fill_template(template.question_pattern, ann, schema)
    answer = fill_template(template.answer_pattern, ann, schema)
    return QaItem(
        ids(template.task, template.subtask), ann.image_id, template.task, template.subtask,
        question, answer, template.answer_type,
    )


# ---------------------------------------------------------------- Reason

REASON_QUESTIONS = {
    "diagnosis": "Based on this report and the given context, what is the diagnosis?",
    "status": "Based on this report and the given context, what is the current status or stage of the disease?",
    "advice": "Based on this report and the given context, what advice should be given?",
}


def top_distractors(
    gold_title: str, candidates: Sequence, sim: SimilarityProvider, n: int = N_OPTIONS - 1
) -> list:
    """The ``n`` candidate facts most similar to ``gold_title``; ties go to
    the smaller fact id."""
    scored = sorted(candidates, key=lambda f: (-sim.score(gold_title, f.title), f.id))
    return scored[:n]


def generate_reasoning_mc(
    ann: ReportAnnotation,
    facts: FactBase,
    sim: SimilarityProvider | None = None,
    rng: random.Random | None = None,
    ids: _Ids | None = None,
) -> list[QaItem]:
    """One MC item per gold context reference. Options come out with the gold
    title first; :func:`balance_options` assigns final positions."""
    sim = sim or BigramCosine()
    ids = ids or _Ids(ann.image_id)
    if not ann.all_context_ids():
        return []
    if len(facts) < N_OPTIONS:
        raise QaError(f"fact base has {len(facts)} titles, need at least {N_OPTIONS}")
    items = []
    for category in CONTEXT_CATEGORIES:
        refs = ann.context_refs[category]
        for ref in refs:
            if ref not in facts:
                raise QaError(f"unknown context id {ref!r} in {ann.image_id}")
            gold = facts[ref]
            pool = [f for f in facts if f.id not in refs]
            if len(pool) < N_OPTIONS - 1:
                raise QaError(f"not enough distractor titles for {ref!r}")
            distractors = top_distractors(gold.title, pool, sim)
            items.append(
                QaItem(
                    ids("Reason", "MC"), ann.image_id, "Reason", "MC",
                    REASON_QUESTIONS[category], gold.title, "SS",
                    options=(gold.title, *(d.title for d in distractors)),
                    correct_index=0,
                    context_ids=(gold.id,),
                )
            )
    return items


def generate_reasoning_sa(
    ann: ReportAnnotation, facts: FactBase, ids: _Ids | None = None
) -> list[QaItem]:
    ids = ids or _Ids(ann.image_id)
    items = []
    for category in CONTEXT_CATEGORIES:
        refs = ann.context_refs[category]
        if not refs:
            continue
        for ref in refs:
            if ref not in facts:
                raise QaError(f"unknown context id {ref!r} in {ann.image_id}")
        answer = "; ".join(facts[r].title for r in refs)
        items.append(
            QaItem(
                ids("Reason", "SA"), ann.image_id, "Reason", "SA",
                REASON_QUESTIONS[category], answer, "NS", context_ids=refs,
            )
        )
    return items


def balance_options(bank: Sequence[QaItem], rng: random.Random) -> list[QaItem]:
    """Place the gold option of successive MC items round-robin over the four
    positions, starting from a seeded position. Distractors keep their
    similarity order in the remaining slots."""
    pos = rng.randrange(N_OPTIONS)
    out = []
    for item in bank:
        if item.options is None:
            out.append(item)
            continue
        gold = item.options[item.correct_index]
        rest = [o for k, o in enumerate(item.options) if k != item.correct_index]
        rest.insert(pos, gold)
        out.append(replace(item, options=tuple(rest), correct_index=pos))
        pos = (pos + 1) % N_OPTIONS
    return out


# ---------------------------------------------------------------- unanswerable

FALLBACK_KEYS = (
    "Blood Type", "Allergy History", "Ward", "Bed Number", "Marital Status",
    "Occupation", "Admission Number", "Smoking History",
)
FALLBACK_ITEMS = (
    "Ferritin", "Troponin I", "Lipase", "Amylase", "Cortisol", "Procalcitonin",
    "Vitamin B12", "Folate", "Homocysteine", "Lactate",
)


def _absent(candidates: Iterable[str], present: set[str], schema: SynonymSchema | None) -> list[str]:
    present_canon = set()
    if schema is not None:
        present_canon = {schema.lookup(p) for p in present} - {None}
    out = []
    seen = set()
    for c in candidates:
        norm = normalize_text(c)
        if not norm or norm in seen:
            continue
        seen.add(norm)
        if norm in present:
            continue
        if schema is not None and schema.lookup(c) in present_canon and schema.lookup(c):
            continue
        out.append(c)
    return out


def unanswerable_question(task: str, target: str) -> str:
    if task == "Entity":
        return f"What is the {target}?"
    return f"What is the result of {target}?"


def mark_unanswerable(
    bank: Sequence[QaItem],
    annotations: Sequence[ReportAnnotation],
    rng: random.Random,
    fraction: float,
    schema: SynonymSchema | None = None,
    tasks: Sequence[str] = ("Entity", "Table"),
) -> list[QaItem]:
    """Rewrite a seeded sample of Entity/Table items to ask about a key or
    lab item the report does not contain."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    out = list(bank)
    if fraction == 0.0:
        return out
    by_id = {a.image_id: a for a in annotations}
    all_keys = sorted({kv.key for a in annotations for kv in a.kv_pairs if kv.key.strip()})
    if schema is not None:
        all_keys += [t for terms in schema.entries.values() for t in terms]
    all_keys += FALLBACK_KEYS
    all_items = sorted({q.item for a in annotations for q in a.quadruplets if q.item.strip()})
    all_items += FALLBACK_ITEMS

    for task in tasks:
        idx = [i for i, it in enumerate(out) if it.task == task and it.answerable]
        chosen = sorted(rng.sample(idx, round(fraction * len(idx))))
        for i in chosen:
            item = out[i]
            ann = by_id.get(item.image_id)
            if ann is None:
                continue
            if task == "Entity":
                present = {normalize_text(kv.key) for kv in ann.kv_pairs}
                pool = _absent(all_keys, present, schema)
            else:
                present = {normalize_text(q.item) for q in ann.quadruplets}
                pool = _absent(all_items, present, None)
            if not pool:
                continue
            target = rng.choice(pool)
            out[i] = replace(
                item,
                question=unanswerable_question(task, target),
                answer=ABSTAIN,
                answerable=False,
                context_ids=(),
            )
    return out


# ---------------------------------------------------------------- bank


@dataclass(frozen=True)
class QaConfig:
    seed: int = 0
    unanswerable_fraction: float = 0.0
    multirow_pairs: int | None = None  # None: min(C(n,2), 2n) per report
    custom_templates: tuple[QaTemplate, ...] = field(default=(SUMMARY_TEMPLATE,))


def generate_bank(
    annotations: Sequence[ReportAnnotation],
    facts: FactBase | None,
    schema: SynonymSchema | None,
    config: QaConfig = QaConfig(),
    sim: SimilarityProvider | None = None,
) -> list[QaItem]:
    sim = sim or BigramCosine()
    bank: list[QaItem] = []
    for ann in sorted(annotations, key=lambda a: a.image_id):
        rng = random.Random(f"{config.seed}/{ann.image_id}")
        ids = _Ids(ann.image_id)
        bank += generate_entity(ann, schema, rng, ids)
        bank += generate_table(ann, schema, rng, config.multirow_pairs, ids)
        bank += generate_tablenr(ann, schema, rng, ids)
        if ann.quadruplets:
            for tpl in config.custom_templates:
                try:
                    bank.append(generate_custom(ann, tpl, schema, ids))
                except TemplateError as exc:
                    logger.info("skipping %s template for %s: %s", tpl.subtask, ann.image_id, exc)
        if facts is not None and ann.all_context_ids():
            bank += generate_reasoning_mc(ann, facts, sim, rng, ids)
            bank += generate_reasoning_sa(ann, facts, ids)
    bank = mark_unanswerable(
        bank, annotations, random.Random(f"{config.seed}/unanswerable"),
        config.unanswerable_fraction, schema,
    )
    return balance_options(bank, random.Random(f"{config.seed}/balance"))
