"""Serialization goldens, budget trimming, filters, and determinism."""
from __future__ import annotations

import random
from pathlib import Path

import pytest

from demo_forge.core import (
    Answer,
    AnswerType,
    Demonstration,
    IntermediateSteps,
    LanguageTag,
    Provenance,
    QuestionType,
    Sample,
    SampleMeta,
    StepsKind,
    Table,
)
from demo_forge.llm import estimate_tokens
from demo_forge.promptkit import (
    AssembledContext,
    ContextSpec,
    EmptyEligiblePool,
    MissingTable,
    QueryAloneExceedsBudget,
    SerializationFormat,
    TypeFilter,
    assemble_context,
    build_prompt,
    serialize_compact,
    serialize_full,
)

from worlds import build_corpus, build_seed_pool

GOLDENS = Path(__file__).parent / "goldens"


def _golden_demo() -> Demonstration:
    table = Table.make(
        ["Day", "Tickets"],
        [["Friday", "71"], ["Saturday", "74"], ["Sunday", "75"], ["Monday", "72"]],
        title="Train ticket sales",
    )
    sample = Sample(
        id="golden-1",
        question="On which day were the fewest train tickets sold?",
        gold_answer=Answer("Friday"),
        table=table,
        meta=SampleMeta(
            question_type=QuestionType.FREE_TEXT, answer_type=AnswerType.EXTRACTIVE_TEXT
        ),
    )
    return Demonstration(
        sample=sample,
        steps=IntermediateSteps(
            StepsKind.PROGRAM, "argmin(to_number(w['Tickets']) -> w['Day'])", LanguageTag.DSL
        ),
        provenance=Provenance.HANDCRAFTED,
    )


def test_full_format_matches_golden():
    assert serialize_full(_golden_demo()) == (GOLDENS / "demo_full.txt").read_text()


def test_compact_format_matches_golden():
    assert serialize_compact(_golden_demo()) == (GOLDENS / "demo_compact.txt").read_text()


def test_query_formats_match_goldens():
    sample = _golden_demo().sample
    assert serialize_full(sample, as_query=True) == (GOLDENS / "query_full.txt").read_text()
    assert (
        serialize_compact(sample, as_query=True)
        == (GOLDENS / "query_compact.txt").read_text()
    )


def test_full_format_structure():
    text = serialize_full(_golden_demo())
    assert "/*" in text and "*/" in text
    assert "3 example rows: SELECT * FROM w LIMIT 3" in text
    # at most three data rows inside the comment block
    block = text.split("/*")[1].split("*/")[0]
    assert "Monday" not in block
    assert "Tickets (number)" in text


def test_zero_row_table_still_well_formed():
    table = Table.make(["A"], [], title="Empty")
    sample = Sample(id="e", question="Anything?", gold_answer=Answer("x"), table=table)
    text = serialize_full(sample)
    assert "/*\n3 example rows: SELECT * FROM w LIMIT 3\n*/" in text
    compact = serialize_compact(sample)
    assert "Empty" in compact
    assert len(compact) < len(text)


def test_compact_strictly_shorter_on_corpus():
    samples, programs = build_corpus(60, seed=3)
    for sample in samples:
        demo = Demonstration(
            sample=sample,
            steps=IntermediateSteps(StepsKind.PROGRAM, programs[sample.id], LanguageTag.DSL),
            provenance=Provenance.HARVESTED,
        )
        assert len(serialize_compact(demo)) < len(serialize_full(demo))


def test_single_row_table_compact_equals_full_first_row():
    table = Table.make(["A", "B"], [["x", "1"]])
    sample = Sample(id="s", question="q?", gold_answer=Answer("1"), table=table)
    full_block = serialize_full(sample).split("/*")[1].split("*/")[0].strip().splitlines()
    compact = serialize_compact(sample).splitlines()
    assert full_block[-1] == "x | 1"
    assert compact[0] == "x | 1"


def test_serialization_injective_on_corpus():
    samples, programs = build_corpus(120, seed=5)
    rendered = set()
    for sample in samples:
        demo = Demonstration(
            sample=sample,
            steps=IntermediateSteps(StepsKind.PROGRAM, programs[sample.id], LanguageTag.DSL),
            provenance=Provenance.HARVESTED,
        )
        text = serialize_full(demo)
        assert text not in rendered, f"collision for {sample.id}"
        rendered.add(text)


def test_missing_table_raises_when_required():
    sample = Sample(id="t", question="2+2?", gold_answer=Answer("4"), table=None)
    with pytest.raises(MissingTable):
        serialize_full(sample)
    assert "Question: 2+2?" in serialize_full(sample, require_table=False)


# ---------------------------------------------------------------------------
# Context assembly


def _demo_pool(n=135, seed=11) -> list[Demonstration]:
    samples, programs = build_corpus(n, seed=seed)
    return [
        Demonstration(
            sample=s,
            steps=IntermediateSteps(StepsKind.PROGRAM, programs[s.id], LanguageTag.DSL),
            provenance=Provenance.HARVESTED,
        )
        for s in samples
    ]


def _query() -> Sample:
    return Sample(
        id="q-main",
        question="Which item has the smallest amount?",
        gold_answer=Answer("oak"),
        table=Table.make(["Item", "Amount"], [["oak", "3"], ["elm", "5"]]),
        meta=SampleMeta(
            question_type=QuestionType.FREE_TEXT, answer_type=AnswerType.EXTRACTIVE_TEXT
        ),
    )


def test_seeded_sampling_is_reproducible():
    pool = _demo_pool(135)
    spec = ContextSpec(n_shots=20, rng_seed=909)
    first = assemble_context(spec, _query(), pool)
    second = assemble_context(spec, _query(), pool)
    assert first.shot_ids == second.shot_ids
    assert len(first.shot_ids) == 20
    assert first.digest == second.digest
    assert first.text == second.text


def test_different_seeds_give_different_subsets():
    pool = _demo_pool(135)
    a = assemble_context(ContextSpec(n_shots=20, rng_seed=1), _query(), pool)
    b = assemble_context(ContextSpec(n_shots=20, rng_seed=2), _query(), pool)
    assert a.shot_ids != b.shot_ids


def test_qa_type_filter_soundness():
    pool = _demo_pool(200)
    query = _query()
    spec = ContextSpec(n_shots=15, type_filter=TypeFilter.QA_TYPE, rng_seed=4)
    ctx = assemble_context(spec, query, pool)
    by_id = {d.id: d for d in pool}
    for sid in ctx.shot_ids:
        meta = by_id[sid].sample.meta
        assert meta.question_type is query.meta.question_type
        assert meta.answer_type is query.meta.answer_type


def test_empty_eligible_pool():
    pool = _demo_pool(20)
    query = Sample(
        id="q",
        question="q?",
        gold_answer=Answer("1"),
        table=Table.make(["A"], [["1"]]),
        meta=SampleMeta(question_type=QuestionType.NONE, answer_type=AnswerType.NONE),
    )
    with pytest.raises(EmptyEligiblePool):
        assemble_context(
            ContextSpec(n_shots=5, type_filter=TypeFilter.QA_TYPE, rng_seed=0), query, pool
        )


def _wide_pool(n=45):
    headers = [f"measurement_column_{i:02d}" for i in range(20)]
    demos = []
    for j in range(n):
        rows = [[f"value_{r}_{c}_{j:02d}_pad" for c in range(20)] for r in range(3)]
        table = Table.make(headers, rows, title=f"Wide table {j}")
        sample = Sample(
            id=f"w{j:03d}",
            question=f"What is the total of measurement column zero in wide table {j}?",
            gold_answer=Answer("0"),
            table=table,
        )
        demos.append(
            Demonstration(
                sample=sample,
                steps=IntermediateSteps(
                    StepsKind.PROGRAM, "sum(w['measurement_column_00'])", LanguageTag.DSL
                ),
                provenance=Provenance.HARVESTED,
            )
        )
    return demos


def test_compact_fits_forty_shots_where_full_does_not():
    pool = _wide_pool(45)
    query = pool[0].sample
    full_spec = ContextSpec(n_shots=40, format=SerializationFormat.FULL, rng_seed=7)
    compact_spec = ContextSpec(n_shots=40, format=SerializationFormat.COMPACT, rng_seed=7)
    full_ctx = assemble_context(full_spec, query, pool)
    compact_ctx = assemble_context(compact_spec, query, pool)
    assert len(compact_ctx.shot_ids) == 40
    assert len(full_ctx.shot_ids) < 40
    assert full_ctx.token_estimate <= full_spec.token_budget
    assert compact_ctx.token_estimate <= compact_spec.token_budget


def test_overflow_drops_from_tail():
    pool = _demo_pool(30)
    query = _query()
    unbounded = assemble_context(ContextSpec(n_shots=10, rng_seed=3, token_budget=10**9), query, pool)
    cramped_budget = unbounded.token_estimate - 10
    cramped = assemble_context(
        ContextSpec(n_shots=10, rng_seed=3, token_budget=cramped_budget), query, pool
    )
    assert 0 < len(cramped.shot_ids) < 10
    assert cramped.shot_ids == unbounded.shot_ids[: len(cramped.shot_ids)]


def test_query_alone_exceeding_budget():
    pool = _demo_pool(5)
    with pytest.raises(QueryAloneExceedsBudget):
        assemble_context(ContextSpec(n_shots=2, rng_seed=0, token_budget=5), _query(), pool)


def test_budget_safety_fuzz():
    rng = random.Random(616)
    pool = _demo_pool(80, seed=21)
    samples, _ = build_corpus(200, seed=22)
    for query in samples:
        budget = rng.choice([400, 800, 1600, 16000])
        spec = ContextSpec(n_shots=rng.randint(0, 30), rng_seed=rng.randint(0, 9999), token_budget=budget)
        try:
            ctx = assemble_context(spec, query, pool)
        except QueryAloneExceedsBudget:
            continue
        prompt = build_prompt(ctx, query, spec)
        assert estimate_tokens(prompt) <= budget
        assert ctx.token_estimate <= budget


def test_prompt_is_context_plus_query():
    pool = _demo_pool(10)
    spec = ContextSpec(n_shots=3, rng_seed=1)
    query = _query()
    ctx = assemble_context(spec, query, pool)
    prompt = build_prompt(ctx, query, spec)
    assert prompt.startswith(ctx.text)
    assert prompt.endswith("Program:\n")
    assert query.question in prompt


def test_instruction_header_included():
    pool = _demo_pool(6)
    spec = ContextSpec(n_shots=2, rng_seed=1, instruction="Answer with a program.")
    ctx = assemble_context(spec, _query(), pool)
    assert ctx.text.startswith("Answer with a program.\n\n")
