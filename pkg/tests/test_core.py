"""Answer normalization, equality, and domain type invariants."""
from __future__ import annotations

import random
import string
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demo_forge.core import (
    Answer,
    AnswerType,
    Attempt,
    DifficultyScore,
    Pool,
    PoolStage,
    QuestionType,
    Sample,
    SampleMeta,
    Table,
    UtilityRecord,
    Verdict,
    answers_equal,
    assert_pool_subset,
    normalize_answer,
)
from demo_forge.core import PoolLineageError


def test_casefold_rule():
    assert normalize_answer("Friday").normalized == "friday"


def test_trailing_zero_rule():
    assert normalize_answer("71.0").normalized == "71"


def test_fraction_kept_verbatim():
    # symbolic fractions are gold answers; never evaluate them
    assert normalize_answer(" 58/141 ").normalized == "58/141"


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("1,234", "1234"),
        ("12,345.60", "12345.6"),
        ("  YES ", "1"),
        ("Refuted", "0"),
        ("TRUE", "1"),
        ("-0", "0"),
        ("007", "7"),
        (".5", "0.5"),
        ("5.", "5"),
        ("0.500", "0.5"),
        ("a|b", "a|b"),
        ("A | B", "a|b"),
        ("3|4.0| no", "3|4|0"),
        ("1,23", "1,23"),  # not a thousands pattern, stays text
    ],
)
def test_normalization_table(raw, expected):
    assert normalize_answer(raw).normalized == expected


def test_answers_equal_examples():
    assert answers_equal("71", "71.0")
    assert not answers_equal("Friday", "Monday")
    assert answers_equal("a|b", "a | B")


def test_answers_equal_is_ordered():
    assert not answers_equal("a|b", "b|a")


def _random_raw(rng: random.Random) -> str:
    pools = [
        lambda: "".join(rng.choices(string.ascii_letters + " ", k=rng.randint(0, 10))),
        lambda: str(rng.randint(-10_000, 10_000)),
        lambda: f"{rng.uniform(-100, 100):.{rng.randint(0, 5)}f}",
        lambda: rng.choice(["yes", "No", "TRUE", "false", "Entailed", "refuted"]),
        lambda: f"{rng.randint(0, 999)},{rng.randint(0, 999):03d}",
        lambda: "|".join(str(rng.randint(0, 99)) for _ in range(rng.randint(2, 4))),
        lambda: rng.choice(["58/141", "3/4", " 1/2 "]),
        lambda: "".join(chr(rng.randint(32, 0x2FF)) for _ in range(rng.randint(0, 6))),
    ]
    return rng.choice(pools)()


def test_normalize_idempotent_on_fuzz_corpus():
    rng = random.Random(20240917)
    for _ in range(10_000):
        raw = _random_raw(rng)
        once = normalize_answer(raw)
        twice = normalize_answer(once.normalized)
        assert once.normalized == twice.normalized, raw
        assert once.parts == twice.parts, raw


def test_answers_equal_equivalence_relation():
    rng = random.Random(5150)
    pool = [normalize_answer(_random_raw(rng)) for _ in range(300)]
    for a in pool[:50]:
        assert answers_equal(a, a)  # reflexive
    for a, b in zip(pool, pool[1:]):
        assert answers_equal(a, b) == answers_equal(b, a)  # symmetric
    # transitivity: canonical forms make it structural
    for a, b, c in zip(pool, pool[1:], pool[2:]):
        if answers_equal(a, b) and answers_equal(b, c):
            assert answers_equal(a, c)


@settings(max_examples=300)
@given(st.text(max_size=40))
def test_normalize_idempotent_property(raw):
    once = normalize_answer(raw)
    assert normalize_answer(once.normalized).normalized == once.normalized


# ---------------------------------------------------------------------------
# Domain type invariants


def test_table_must_be_rectangular():
    with pytest.raises(ValueError, match="rectangular"):
        Table.make(["A", "B"], [["1"]])


def test_table_headers_nonempty():
    with pytest.raises(ValueError):
        Table.make(["A", "  "], [])
    with pytest.raises(ValueError):
        Table.make([], [])


def test_sample_requires_question_and_gold():
    table = Table.make(["A"], [["1"]])
    with pytest.raises(ValueError):
        Sample(id="x", question="  ", gold_answer=Answer("1"), table=table)
    with pytest.raises(ValueError):
        Sample(id="", question="q?", gold_answer=Answer("1"), table=table)


def test_multi_choice_requires_choices():
    with pytest.raises(ValueError):
        SampleMeta(question_type=QuestionType.MULTI_CHOICE)
    meta = SampleMeta(question_type=QuestionType.MULTI_CHOICE, choices=("a", "b"))
    assert meta.choices == ("a", "b")


def test_difficulty_score_bounds():
    assert DifficultyScore(4, 20).value == Fraction(1, 5)
    assert 0 <= DifficultyScore(0, 1).value <= 1
    assert DifficultyScore(20, 20).value == 1
    with pytest.raises(ValueError):
        DifficultyScore(5, 4)
    with pytest.raises(ValueError):
        DifficultyScore(0, 0)


def test_utility_record_bounds():
    assert UtilityRecord(100, 13).rate == Fraction(13, 100)
    with pytest.raises(ValueError):
        UtilityRecord(10, 11)


def test_attempt_error_verdicts_forbid_prediction():
    with pytest.raises(ValueError):
        Attempt(
            sample_id="s",
            attempt_index=0,
            context_id="c",
            completion="x",
            verdict=Verdict.PARSE_ERROR,
            predicted=Answer("1"),
        )
    with pytest.raises(ValueError):
        Attempt(
            sample_id="s",
            attempt_index=0,
            context_id="c",
            completion="x",
            verdict=Verdict.CORRECT,
            predicted=None,
        )


def test_verdict_partition_is_exhaustive():
    labels = {v.value for v in Verdict}
    assert labels == {"correct", "wrong", "execution_error", "parse_error", "backend_error"}


def test_pool_subset_assertion():
    a = Pool("a", PoolStage.A, frozenset({"1", "2", "3"}))
    b = Pool("b", PoolStage.B, frozenset({"2"}), lineage="a")
    assert_pool_subset(b, a)
    bad = Pool("b2", PoolStage.B, frozenset({"2", "9"}), lineage="a")
    with pytest.raises(PoolLineageError):
        assert_pool_subset(bad, a)


def test_sample_json_roundtrip():
    sample = Sample(
        id="s1",
        question="How many?",
        gold_answer=Answer("4"),
        table=Table.make(["A", "B"], [["x", "1"], ["y", "2"]], title="T"),
        meta=SampleMeta(
            question_type=QuestionType.MULTI_CHOICE,
            answer_type=AnswerType.INTEGER_NUMBER,
            grade=3,
            choices=("4", "5"),
        ),
    )
    again = Sample.from_json(sample.to_json())
    assert again == sample
