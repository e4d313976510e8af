import math
import random
import re
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from esra.annotation import (
    ContextFact,
    FactBase,
    Flag,
    KeyValuePair,
    Quadruplet,
    ReportAnnotation,
    canonicalize,
    default_schema,
    normalize_text,
    sample_fact_base,
)
from esra.qa import (
    ABSTAIN,
    NONE_ABNORMAL,
    QaConfig,
    QaItem,
    QaTemplate,
    TemplateError,
    balance_options,
    generate_bank,
    generate_custom,
    generate_entity,
    generate_reasoning_mc,
    generate_reasoning_sa,
    generate_table,
    generate_tablenr,
    mark_unanswerable,
    read_bank,
    write_bank,
)
from esra.similarity import BigramCosine, EmbeddingSimilarity
from esra.synth import SynthSpec, corpus

SCHEMA = default_schema()


def rng():
    return random.Random(0)


def lab(quads, kv=(), refs=None, image_id="r1"):
    return ReportAnnotation(
        image_id, "laboratory", kv_pairs=tuple(kv), quadruplets=tuple(quads),
        context_refs=refs or {},
    )


def q(item, result, rng_, flag):
    return Quadruplet(item, result, rng_, flag)


FIVE = [
    q("Hb", "130", "115-150", Flag.NORMAL),
    q("WBC", "10.2", "3.5-9.5", Flag.HIGH),
    q("PLT", "90", "125-350", Flag.LOW),
    q("PSA", "2.1", "<4", Flag.NORMAL),
    q("尿蛋白", "阴性", "阴性", Flag.NORMAL),
]


# ---------------------------------------------------------------- Entity


def test_entity_single_template():
    ann = ReportAnnotation("r1", "diagnostic", kv_pairs=(KeyValuePair("Impression", "renal cyst"),))
    (item,) = generate_entity(ann, None, rng())
    assert item.question == "What is the Impression?"
    assert item.answer == "Impression is renal cyst."
    assert (item.task, item.subtask, item.answer_type) == ("Entity", "Single", "SS")


def test_entity_key_rendered_with_synonym():
    ann = ReportAnnotation("r1", "diagnostic", kv_pairs=(KeyValuePair("Impression", "renal cyst"),))
    seen = set()
    for seed in range(40):
        (item,) = generate_entity(ann, SCHEMA, random.Random(seed))
        key = re.fullmatch(r"What is the (.+)\?", item.question).group(1)
        assert canonicalize(key, SCHEMA).key == "Conclusion"
        assert item.answer == f"{key} is renal cyst."
        seen.add(key)
    assert len(seen) > 1


def test_entity_empty():
    assert generate_entity(ReportAnnotation("r1", "diagnostic"), SCHEMA, rng()) == []


def test_entity_counts():
    kv = [KeyValuePair("Name", "A"), KeyValuePair("Age", "40"), KeyValuePair("Date", "2023-01-01")]
    items = generate_entity(ReportAnnotation("r1", "diagnostic", kv_pairs=tuple(kv)), SCHEMA, rng())
    counts = Counter(i.subtask for i in items)
    assert counts == {"Single": 3, "Multi": math.comb(3, 2)}
    multi = [i for i in items if i.subtask == "Multi"]
    assert {i.answer for i in multi} == {"A; 40", "A; 2023-01-01", "40; 2023-01-01"}
    assert all(i.answer_type == "MS" for i in multi)


# ---------------------------------------------------------------- Table


def test_single_row_template():
    items = generate_table(lab([FIVE[0]]), None, rng())
    row = [i for i in items if i.subtask == "SingleRow"][0]
    assert row.answer == "The result of Hb is 130, and the reference range is 115-150."
    assert not [i for i in items if i.subtask == "MultiRow"]


def test_table_counts():
    items = generate_table(lab(FIVE), SCHEMA, rng(), pair_count=2)
    assert Counter(i.subtask for i in items) == {"SingleCell": 5, "SingleRow": 5, "MultiRow": 2}


def test_table_default_pair_count():
    items = generate_table(lab(FIVE), SCHEMA, rng())
    assert Counter(i.subtask for i in items)["MultiRow"] == min(math.comb(5, 2), 10)


# ---------------------------------------------------------------- TableNR


def test_comparison_high_verdict():
    items = generate_tablenr(lab([FIVE[1]]), None, rng())
    comp = [i for i in items if i.subtask == "Comparison"][0]
    assert "abnormal (high)" in comp.answer
    assert "10.2" in comp.answer and "3.5-9.5" in comp.answer


def test_multi_abnormal_lists_high_and_low_in_order():
    quads = [FIVE[1], FIVE[0], FIVE[2]]
    items = generate_tablenr(lab(quads), SCHEMA, rng())
    (multi,) = [i for i in items if i.subtask == "MultiAbnormal"]
    oracle = [x.item for x in quads if x.flag in (Flag.HIGH, Flag.LOW)]
    assert multi.answer == ", ".join(oracle) + "."


def test_multi_abnormal_none():
    items = generate_tablenr(lab([FIVE[0], FIVE[3]]), SCHEMA, rng())
    (multi,) = [i for i in items if i.subtask == "MultiAbnormal"]
    assert multi.answer == NONE_ABNORMAL


def test_undetermined_rows_skip_comparison():
    items = generate_tablenr(lab([q("X", "5", "", Flag.UNDETERMINED)]), SCHEMA, rng())
    assert [i.subtask for i in items] == ["MultiAbnormal"]


# ---------------------------------------------------------------- Custom


def test_summary_counts():
    quads = [q(f"I{k}", "1", "0-2", Flag.NORMAL) for k in range(8)]
    quads += [q("WBC", "10.2", "3.5-9.5", Flag.HIGH), q("PLT", "90", "125-350", Flag.LOW)]
    item = generate_custom(lab(quads))
    assert "10 items" in item.answer and " 2 are" in item.answer
    assert "WBC" in item.answer and "PLT" in item.answer


def test_summary_needs_table():
    with pytest.raises(TemplateError) as err:
        generate_custom(ReportAnnotation("r1", "diagnostic"))
    assert err.value.slot == "item_count"


def test_missing_kv_slot_named():
    tpl = QaTemplate("Custom", "Summarization", "Who is {kv:Name}?", "{kv:Ward}")
    ann = lab(FIVE, kv=[KeyValuePair("Patient", "A")])
    with pytest.raises(TemplateError, match="kv:Ward"):
        generate_custom(ann, tpl, SCHEMA)
    # synonyms resolve through the schema
    tpl = QaTemplate("Custom", "Summarization", "Q", "{kv:Name}")
    assert generate_custom(ann, tpl, SCHEMA).answer == "A"


# ---------------------------------------------------------------- Reason


def bigram_cosine(a, b):
    # independent re-derivation of the default similarity
    def grams(s):
        s = normalize_text(s)
        return Counter(s[i : i + 2] for i in range(len(s) - 1)) if len(s) > 1 else Counter([s])

    if normalize_text(a) == normalize_text(b):
        return 1.0
    u, v = grams(a), grams(b)
    dot = sum(u[g] * v[g] for g in u)
    return dot / (math.sqrt(sum(x * x for x in u.values())) * math.sqrt(sum(x * x for x in v.values())))


def test_mild_anemia_distractors():
    titles = ["Mild Anemia", "Moderate Anemia", "Severe Anemia", "Renal Cysts Treatment", "Thrombosis Formation"]
    facts = FactBase(
        ContextFact(f"T{k}", t, "laboratory", "Exam-Disease", "") for k, t in enumerate(titles)
    )
    ann = lab(FIVE, refs={"diagnosis": ("T0",)})
    (item,) = generate_reasoning_mc(ann, facts, BigramCosine(), rng())
    scored = sorted(
        ((-bigram_cosine("Mild Anemia", f.title), f.id, f.title) for f in facts if f.id != "T0")
    )
    assert list(item.options[1:]) == [t for _, _, t in scored[:3]]
    assert item.options[0] == "Mild Anemia" and item.correct_index == 0


def test_four_titles_use_all():
    facts = FactBase(ContextFact(f"T{k}", f"title {k}", "clinical", "Exam", "") for k in range(4))
    (item,) = generate_reasoning_mc(lab(FIVE, refs={"advice": ("T2",)}), facts)
    assert sorted(item.options) == sorted(f.title for f in facts)


def test_too_few_titles():
    facts = FactBase(ContextFact(f"T{k}", f"title {k}", "clinical", "Exam", "") for k in range(3))
    with pytest.raises(ValueError):
        generate_reasoning_mc(lab(FIVE, refs={"advice": ("T2",)}), facts)


def test_sa_answers():
    facts = sample_fact_base()
    one = generate_reasoning_sa(lab(FIVE, refs={"diagnosis": ("F03",)}), facts)
    assert [i.answer for i in one] == [facts["F03"].title]
    two = generate_reasoning_sa(lab(FIVE, refs={"diagnosis": ("F05", "F02")}), facts)
    assert two[0].answer == f"{facts['F05'].title}; {facts['F02'].title}"
    assert two[0].answer_type == "NS"


def test_embedding_similarity_contract():
    vecs = {"a": (1.0, 0.0), "b": (0.0, 1.0), "c": (1.0, 1.0)}
    sim = EmbeddingSimilarity(vecs.__getitem__)
    assert sim.score("a", "a") == 1.0
    assert sim.score("a", "c") == pytest.approx(sim.score("c", "a"))
    assert 0.0 <= sim.score("a", "b") <= 1.0


@given(st.text(max_size=15), st.text(max_size=15))
def test_bigram_similarity_contract(a, b):
    s = BigramCosine()
    assert abs(s.score(a, a) - 1.0) <= 1e-9
    assert s.score(a, b) == pytest.approx(s.score(b, a))
    assert 0.0 <= s.score(a, b) <= 1.0


# ---------------------------------------------------------------- bank


def lab_corpus(n=60, seed=0):
    facts = sample_fact_base()
    base = SynthSpec(layout="lab", seed=seed)
    return [t.annotation for _, t in corpus(base, n, rows=(1, 10), facts=facts)], facts


def multi_ref_annotations(n=70):
    # three categories per report gives plenty of MC items
    facts = sample_fact_base()
    ids = [f.id for f in facts]
    r = random.Random(5)
    anns = []
    for k in range(n):
        refs = {c: tuple(r.sample(ids, r.randint(1, 2))) for c in ("diagnosis", "status", "advice")}
        anns.append(lab(FIVE, refs=refs, image_id=f"img{k:03d}"))
    return anns, facts


def test_bank_determinism():
    anns, facts = lab_corpus()
    cfg = QaConfig(seed=11, unanswerable_fraction=0.2)
    a = write_bank(generate_bank(anns, facts, SCHEMA, cfg))
    b = write_bank(generate_bank(list(reversed(anns)), facts, SCHEMA, cfg))
    assert a == b
    assert write_bank(generate_bank(anns, facts, SCHEMA, QaConfig(seed=12, unanswerable_fraction=0.2))) != a


def test_bank_round_trip():
    anns, facts = lab_corpus(10)
    bank = generate_bank(anns, facts, SCHEMA, QaConfig(unanswerable_fraction=0.3))
    assert read_bank(write_bank(bank)) == bank
    assert len({i.qa_id for i in bank}) == len(bank)


def test_option_balance():
    anns, facts = multi_ref_annotations()
    bank = generate_bank(anns, facts, SCHEMA, QaConfig(seed=3))
    mc = [i for i in bank if i.options is not None]
    assert len(mc) >= 200
    counts = Counter(i.correct_index for i in mc)
    assert max(counts.values()) - min(counts[k] for k in range(4)) <= 1
    for item in mc:
        assert len(set(item.options)) == 4
        gold = sample_fact_base()[item.context_ids[0]].title
        assert item.options.count(gold) == 1 and item.options[item.correct_index] == gold


@given(st.lists(st.integers(0, 3), max_size=60), st.integers(0, 1000))
def test_balance_any_input(indices, seed):
    items = [
        QaItem(f"x{k}", "x", "Reason", "MC", "?", "a", "SS",
               options=("a", "b", "c", "d"), correct_index=0)
        for k, _ in enumerate(indices)
    ]
    out = balance_options(items, random.Random(seed))
    counts = Counter(i.correct_index for i in out)
    if out:
        assert max(counts.values()) - min(counts[k] for k in range(4)) <= 1
    assert all(i.options[i.correct_index] == "a" for i in out)


def test_sa_subset_of_mc():
    anns, facts = multi_ref_annotations(20)
    bank = generate_bank(anns, facts, SCHEMA, QaConfig(seed=1))
    for sa in (i for i in bank if i.subtask == "SA"):
        gold = Counter(
            m.options[m.correct_index]
            for m in bank
            if m.subtask == "MC" and m.image_id == sa.image_id and m.question == sa.question
        )
        assert not Counter(sa.answer.split("; ")) - gold


def test_unanswerable_entity_keys_absent():
    anns, facts = lab_corpus(20)
    bank = generate_bank(anns, facts, SCHEMA, QaConfig(seed=2))
    by_id = {a.image_id: a for a in anns}
    out = mark_unanswerable(bank, anns, random.Random(0), 1.0, SCHEMA, tasks=("Entity",))
    entity = [i for i in out if i.task == "Entity"]
    assert entity and all(not i.answerable and i.answer == ABSTAIN for i in entity)
    for item in entity:
        key = re.fullmatch(r"What is the (.+)\?", item.question).group(1)
        ann = by_id[item.image_id]
        present = {normalize_text(kv.key) for kv in ann.kv_pairs}
        present_canon = {canonicalize(kv.key, SCHEMA).key for kv in ann.kv_pairs}
        assert normalize_text(key) not in present
        assert canonicalize(key, SCHEMA).key not in present_canon


def test_unanswerable_zero_fraction_is_identity():
    anns, facts = lab_corpus(5)
    bank = generate_bank(anns, facts, SCHEMA)
    assert mark_unanswerable(bank, anns, random.Random(0), 0.0, SCHEMA) == bank


def test_unanswerable_table_items_absent():
    anns, facts = lab_corpus(20)
    bank = generate_bank(anns, facts, SCHEMA, QaConfig(unanswerable_fraction=1.0))
    by_id = {a.image_id: a for a in anns}
    table = [i for i in bank if i.task == "Table"]
    assert table and all(not i.answerable for i in table)
    for item in table:
        target = re.fullmatch(r"What is the result of (.+)\?", item.question).group(1)
        assert target not in {x.item for x in by_id[item.image_id].quadruplets}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_answer_values_come_from_annotation(seed):
    anns, facts = lab_corpus(4, seed)
    bank = generate_bank(anns, facts, SCHEMA, QaConfig(seed=seed))
    by_id = {a.image_id: a for a in anns}
    for item in bank:
        ann = by_id[item.image_id]
        values = {kv.value for kv in ann.kv_pairs}
        rows = {(x.item, x.result, x.range) for x in ann.quadruplets}
        if item.task == "Entity" and item.subtask == "Single":
            m = re.fullmatch(r"(.+) is (.+)\.", item.answer)
            assert m.group(2) in values
            assert canonicalize(m.group(1), SCHEMA).key in {canonicalize(kv.key, SCHEMA).key for kv in ann.kv_pairs}
        elif item.task == "Entity":
            assert set(item.answer.split("; ")) <= values
        elif item.subtask == "SingleCell":
            m = re.fullmatch(r"The .+ of (.+) is (.+)\.", item.answer)
            assert (m.group(1), m.group(2)) in {(i, r) for i, r, _ in rows}
        elif item.subtask == "SingleRow":
            m = re.fullmatch(r"The .+ of (.+) is (.+), and the .+ is (.+)\.", item.answer)
            assert m.groups() in rows
        elif item.subtask == "MultiRow":
            for part in item.answer.rstrip(";").split("; "):
                assert tuple(part.rstrip(";").split(", ")) in rows
        elif item.subtask == "Comparison":
            m = re.fullmatch(r"The .+ of (.+) is (.+) and the .+ is (.+), hence .+\.", item.answer)
            assert m.groups() in rows
        elif item.task == "Reason":
            titles = {facts[c].title for c in ann.all_context_ids()}
            assert set(item.answer.split("; ")) <= titles
