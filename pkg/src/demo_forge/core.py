"""Domain types shared by every pipeline stage, plus answer normalization.

The answer canon here is what "solved" means everywhere else: a generated
program or reasoning chain counts as correct iff its final answer, after
normalization, equals the gold answer. Keep this module dependency-free;
everything downstream imports it.
"""
from __future__ import annotations

import decimal
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping


class DemoForgeError(Exception):
    """Base class for all errors raised by this package."""


class QuestionType(str, Enum):
    FREE_TEXT = "free_text"
    MULTI_CHOICE = "multi_choice"
    NONE = "none"


class AnswerType(str, Enum):
    INTEGER_NUMBER = "integer_number"
    EXTRACTIVE_TEXT = "extractive_text"
    DECIMAL_NUMBER = "decimal_number"
    BOOLEAN_TEXT = "boolean_text"
    OTHER_TEXT = "other_text"
    NONE = "none"


class StepsKind(str, Enum):
    PROGRAM = "program"
    REASONING_CHAIN = "reasoning_chain"


class LanguageTag(str, Enum):
    DSL = "dsl"
    PYTHON = "python"
    FREEFORM = "freeform"


class Provenance(str, Enum):
    HANDCRAFTED = "handcrafted"
    HARVESTED = "harvested"


class Verdict(str, Enum):
    CORRECT = "correct"
    WRONG = "wrong"
    EXECUTION_ERROR = "execution_error"
    PARSE_ERROR = "parse_error"
    BACKEND_ERROR = "backend_error"


class PoolStage(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    HANDCRAFTED = "handcrafted"
    MERGED = "merged"


_ERROR_VERDICTS = frozenset(
    {Verdict.PARSE_ERROR, Verdict.EXECUTION_ERROR, Verdict.BACKEND_ERROR}
)

# ---------------------------------------------------------------------------
# Answer normalization

_BOOL_SYNONYMS = {
    "yes": "1",
    "true": "1",
    "entailed": "1",
    "no": "0",
    "false": "0",
    "refuted": "0",
}

# "1,234" / "12,345.60" style; commas are removed before numeric parsing.
_THOUSANDS_RE = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d*)?$")
_NUMBER_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$")

_LIST_SEPARATOR = "|"


def _canonical_number(text: str) -> str:
    d = decimal.Decimal(text)
    if d == 0:
        return "0"
    s = format(d, "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


def _normalize_atom(raw: str) -> str:
    s = unicodedata.normalize("NFC", raw)
    s = s.strip().casefold()
    if s in _BOOL_SYNONYMS:
        return _BOOL_SYNONYMS[s]
    if _THOUSANDS_RE.match(s):
        s = s.replace(",", "")
    if _NUMBER_RE.match(s):
        return _canonical_number(s)
    return s


@dataclass(frozen=True)
class Answer:
    """A raw answer string and its canonical form.

    ``normalized`` is a pure function of ``raw``; list-valued answers are
    split on ``|`` and each part normalized independently.
    """

    raw: str
    normalized: str = field(init=False)
    parts: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        parts = tuple(_normalize_atom(p) for p in self.raw.split(_LIST_SEPARATOR))
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "normalized", _LIST_SEPARATOR.join(parts))

    def to_json(self) -> str:
        return self.raw


def normalize_answer(raw: str, answer_type: AnswerType | None = None) -> Answer:
    """Canonicalize an answer string.

    Total function: NFC, trim, casefold; numeric strings become exact
    decimals with thousands separators removed and trailing fractional
    zeros stripped; boolean synonyms map to "1"/"0"; list answers split
    on "|". ``answer_type`` is accepted so dataset adapters can override
    per type; the default canon ignores it.
    """
    del answer_type
    return Answer(raw)


def answers_equal(a: Answer | str, b: Answer | str) -> bool:
    """True iff the normalized part lists are equal element-wise."""
    if isinstance(a, str):
        a = Answer(a)
    if isinstance(b, str):
        b = Answer(b)
    return a.parts == b.parts


# ---------------------------------------------------------------------------
# Samples and tables


@dataclass(frozen=True)
class Table:
    headers: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    title: str | None = None

    def __post_init__(self) -> None:
        if not self.headers:
            raise ValueError("table must have at least one header")
        for h in self.headers:
            if not h.strip():
                raise ValueError("table headers must be non-empty after trimming")
        width = len(self.headers)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(
                    f"row {i} has {len(row)} cells, expected {width} (rectangular table)"
                )

    @classmethod
    def make(cls, headers: list[str], rows: list[list[str]], title: str | None = None) -> "Table":
        return cls(
            headers=tuple(headers),
            rows=tuple(tuple(str(c) for c in r) for r in rows),
            title=title,
        )

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "headers": list(self.headers),
            "rows": [list(r) for r in self.rows],
        }
        if self.title is not None:
            doc["title"] = self.title
        return doc

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "Table":
        return cls.make(
            headers=[str(h) for h in raw["headers"]],
            rows=[[str(c) for c in row] for row in raw["rows"]],
            title=raw.get("title"),
        )


@dataclass(frozen=True)
class SampleMeta:
    question_type: QuestionType = QuestionType.NONE
    answer_type: AnswerType = AnswerType.NONE
    grade: int | None = None
    choices: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.question_type is QuestionType.MULTI_CHOICE and not self.choices:
            raise ValueError("multi_choice questions must carry choices")

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {}
        if self.question_type is not QuestionType.NONE:
            doc["question_type"] = self.question_type.value
        if self.answer_type is not AnswerType.NONE:
            doc["answer_type"] = self.answer_type.value
        if self.grade is not None:
            doc["grade"] = self.grade
        if self.choices is not None:
            doc["choices"] = list(self.choices)
        return doc

    @classmethod
    def from_json(cls, raw: Mapping[str, Any] | None) -> "SampleMeta":
        raw = raw or {}
        choices = raw.get("choices")
        return cls(
            question_type=QuestionType(raw.get("question_type", "none")),
            answer_type=AnswerType(raw.get("answer_type", "none")),
            grade=raw.get("grade"),
            choices=tuple(str(c) for c in choices) if choices else None,
        )


@dataclass(frozen=True)
class Sample:
    """One weakly labeled task instance: table, question, final answer."""

    id: str
    question: str
    gold_answer: Answer
    table: Table | None = None
    meta: SampleMeta = field(default_factory=SampleMeta)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("sample id must be non-empty")
        if not self.question.strip():
            raise ValueError("sample question must be non-empty")
        if not self.gold_answer.raw.strip():
            raise ValueError("sample gold answer must be non-empty")

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "id": self.id,
            "question": self.question,
            "answer": self.gold_answer.raw,
        }
        if self.table is not None:
            doc["table"] = self.table.to_json()
        meta = self.meta.to_json()
        if meta:
            doc["meta"] = meta
        return doc

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "Sample":
        table = raw.get("table")
        return cls(
            id=str(raw["id"]),
            question=str(raw["question"]),
            gold_answer=Answer(str(raw["answer"])),
            table=Table.from_json(table) if table else None,
            meta=SampleMeta.from_json(raw.get("meta")),
        )


# ---------------------------------------------------------------------------
# Demonstrations, attempts, pools


@dataclass(frozen=True)
class IntermediateSteps:
    kind: StepsKind
    body: str
    language_tag: LanguageTag = LanguageTag.DSL

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "body": self.body,
            "language_tag": self.language_tag.value,
        }

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "IntermediateSteps":
        return cls(
            kind=StepsKind(raw["kind"]),
            body=str(raw["body"]),
            language_tag=LanguageTag(raw.get("language_tag", "dsl")),
        )


@dataclass(frozen=True)
class DifficultyScore:
    """k successful attempts out of N; value is the exact rational k/N."""

    k: int
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("difficulty requires at least one attempt")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"difficulty needs 0 <= k <= N, got k={self.k} N={self.n}")

    @property
    def value(self) -> Fraction:
        return Fraction(self.k, self.n)

    def to_json(self) -> dict[str, int]:
        return {"k": self.k, "n": self.n}

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "DifficultyScore":
        return cls(k=int(raw["k"]), n=int(raw["n"]))


@dataclass(frozen=True)
class UtilityRecord:
    """One-shot campaign outcome for a candidate demonstration."""

    uses: int
    solves: int

    def __post_init__(self) -> None:
        if not 0 <= self.solves <= self.uses:
            raise ValueError(f"need 0 <= solves <= uses, got {self.solves}/{self.uses}")

    @property
    def rate(self) -> Fraction:
        if self.uses == 0:
            return Fraction(0)
        return Fraction(self.solves, self.uses)

    def to_json(self) -> dict[str, int]:
        return {"uses": self.uses, "solves": self.solves}

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "UtilityRecord":
        return cls(uses=int(raw["uses"]), solves=int(raw["solves"]))


@dataclass(frozen=True)
class Demonstration:
    """A sample plus verified intermediate steps and refinement stats."""

    sample: Sample
    steps: IntermediateSteps
    provenance: Provenance
    difficulty: DifficultyScore | None = None
    utility: UtilityRecord | None = None

    @property
    def id(self) -> str:
        return self.sample.id

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "sample": self.sample.to_json(),
            "steps": self.steps.to_json(),
            "provenance": self.provenance.value,
        }
        if self.difficulty is not None:
            doc["difficulty"] = self.difficulty.to_json()
        if self.utility is not None:
            doc["utility"] = self.utility.to_json()
        return doc

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "Demonstration":
        difficulty = raw.get("difficulty")
        utility = raw.get("utility")
        return cls(
            sample=Sample.from_json(raw["sample"]),
            steps=IntermediateSteps.from_json(raw["steps"]),
            provenance=Provenance(raw["provenance"]),
            difficulty=DifficultyScore.from_json(difficulty) if difficulty else None,
            utility=UtilityRecord.from_json(utility) if utility else None,
        )


@dataclass(frozen=True)
class Attempt:
    """One generation + execution + verdict record."""

    sample_id: str
    attempt_index: int
    context_id: str
    completion: str
    verdict: Verdict
    parsed_steps: IntermediateSteps | None = None
    predicted: Answer | None = None

    def __post_init__(self) -> None:
        if self.attempt_index < 0:
            raise ValueError("attempt_index must be >= 0")
        if self.verdict in _ERROR_VERDICTS and self.predicted is not None:
            raise ValueError(f"verdict {self.verdict.value} implies no prediction")
        if self.verdict is Verdict.CORRECT and self.predicted is None:
            raise ValueError("verdict correct requires a prediction")

    def to_json(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "attempt_index": self.attempt_index,
            "context_id": self.context_id,
            "completion": self.completion,
            "steps": self.parsed_steps.to_json() if self.parsed_steps else None,
            "predicted": self.predicted.raw if self.predicted else None,
            "verdict": self.verdict.value,
        }

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "Attempt":
        steps = raw.get("steps")
        predicted = raw.get("predicted")
        return cls(
            sample_id=str(raw["sample_id"]),
            attempt_index=int(raw["attempt_index"]),
            context_id=str(raw["context_id"]),
            completion=str(raw["completion"]),
            verdict=Verdict(raw["verdict"]),
            parsed_steps=IntermediateSteps.from_json(steps) if steps else None,
            predicted=Answer(str(predicted)) if predicted is not None else None,
        )


class PoolLineageError(DemoForgeError):
    """A pool stage violates its subset relation to the parent stage."""


@dataclass(frozen=True)
class Pool:
    """A named, lineage-tracked set of demonstration references."""

    name: str
    stage: PoolStage
    member_ids: frozenset[str]
    lineage: str | None = None
    created_with: str = ""

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "stage": self.stage.value,
            "member_ids": sorted(self.member_ids),
            "lineage": self.lineage,
            "created_with": self.created_with,
        }

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "Pool":
        return cls(
            name=str(raw["name"]),
            stage=PoolStage(raw["stage"]),
            member_ids=frozenset(str(m) for m in raw["member_ids"]),
            lineage=raw.get("lineage"),
            created_with=str(raw.get("created_with", "")),
        )


def assert_pool_subset(child: Pool, parent: Pool) -> None:
    """Raise PoolLineageError unless child members are a subset of parent's."""
    extra = child.member_ids - parent.member_ids
    if extra:
        raise PoolLineageError(
            f"pool {child.name} ({child.stage.value}) has {len(extra)} members "
            f"outside parent {parent.name}: {sorted(extra)[:5]}"
        )


def assert_disjoint(pool: Pool, other_ids: frozenset[str] | set[str], label: str) -> None:
    overlap = pool.member_ids & set(other_ids)
    if overlap:
        raise PoolLineageError(
            f"pool {pool.name} overlaps {label} on {len(overlap)} ids: {sorted(overlap)[:5]}"
        )
