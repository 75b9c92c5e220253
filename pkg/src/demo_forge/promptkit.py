"""Prompt serialization and context assembly under a token budget.

Two deterministic demonstration formats:

* full    — title, typed header line, a ``/* ... */`` comment block with
            "3 example rows: SELECT * FROM w LIMIT 3" and up to three
            data rows, then the question and (for demonstrations) the
            intermediate steps.
* compact — drops the header/type line and the comment block, keeps one
            data row; question and steps stay in full.

Contexts are random pool subsets drawn with a seeded RNG, independent of
the query, trimmed from the tail until the assembled prompt fits the
token budget.
"""
from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .core import Demonstration, DemoForgeError, Sample, SampleMeta, StepsKind, Table
from .llm import estimate_tokens

FORMAT_VERSION = "prompt-v1"
DEFAULT_TOKEN_BUDGET = 16000


class MissingTable(DemoForgeError):
    pass


class EmptyEligiblePool(DemoForgeError):
    pass


class QueryAloneExceedsBudget(DemoForgeError):
    pass


class SerializationFormat(str, Enum):
    FULL = "full"
    COMPACT = "compact"


class TypeFilter(str, Enum):
    NONE = "none"
    Q_TYPE = "q_type"
    QA_TYPE = "qa_type"


_THOUSANDS_RE = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d*)?$")
_NUMBER_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$")

_STEPS_LABEL = {
    StepsKind.PROGRAM: "Program:",
    StepsKind.REASONING_CHAIN: "Reasoning:",
}


def _column_is_numeric(table: Table, idx: int) -> bool:
    seen = False
    for row in table.rows:
        cell = row[idx].strip()
        if not cell:
            continue
        seen = True
        body = cell.replace(",", "") if _THOUSANDS_RE.match(cell) else cell
        if not _NUMBER_RE.match(body):
            return False
    return seen


def _table_lines_full(table: Table) -> list[str]:
    lines = []
    if table.title:
        lines.append(f"Table: {table.title}")
    types = (
        "number" if _column_is_numeric(table, i) else "text"
        for i in range(len(table.headers))
    )
    lines.append("Columns: " + " | ".join(f"{h} ({t})" for h, t in zip(table.headers, types)))
    lines.append("/*")
    lines.append("3 example rows: SELECT * FROM w LIMIT 3")
    for row in table.rows[:3]:
        lines.append(" | ".join(row))
    lines.append("*/")
    return lines


def _table_lines_compact(table: Table) -> list[str]:
    lines = []
    if table.title:
        lines.append(f"Table: {table.title}")
    if table.rows:
        lines.append(" | ".join(table.rows[0]))
    return lines


def _serialize(
    item: Demonstration | Sample,
    fmt: SerializationFormat,
    *,
    require_table: bool,
    as_query: bool,
    query_steps_kind: StepsKind,
) -> str:
    sample = item.sample if isinstance(item, Demonstration) else item
    lines: list[str] = []
    if sample.table is None:
        if require_table:
            raise MissingTable(f"sample {sample.id} has no table")
    elif fmt is SerializationFormat.FULL:
        lines.extend(_table_lines_full(sample.table))
    else:
        lines.extend(_table_lines_compact(sample.table))
    lines.append(f"Question: {sample.question}")
    if sample.meta.choices:
        lines.append("Choices: " + " | ".join(sample.meta.choices))
    if isinstance(item, Demonstration):
        lines.append(_STEPS_LABEL[item.steps.kind])
        lines.append(item.steps.body)
    elif as_query:
        lines.append(_STEPS_LABEL[query_steps_kind])
    return "\n".join(lines) + "\n"


def serialize_full(
    item: Demonstration | Sample,
    *,
    require_table: bool = True,
    as_query: bool = False,
    query_steps_kind: StepsKind = StepsKind.PROGRAM,
) -> str:
    """Render the full-format prompt block for a demonstration or query."""
    return _serialize(
        item,
        SerializationFormat.FULL,
        require_table=require_table,
        as_query=as_query,
        query_steps_kind=query_steps_kind,
    )


def serialize_compact(
    item: Demonstration | Sample,
    *,
    require_table: bool = True,
    as_query: bool = False,
    query_steps_kind: StepsKind = StepsKind.PROGRAM,
) -> str:
    """Render the compact-format block: one data row, no header/type lines."""
    return _serialize(
        item,
        SerializationFormat.COMPACT,
        require_table=require_table,
        as_query=as_query,
        query_steps_kind=query_steps_kind,
    )


def serialize(
    item: Demonstration | Sample,
    fmt: SerializationFormat,
    **kwargs,
) -> str:
    if fmt is SerializationFormat.FULL:
        return serialize_full(item, **kwargs)
    return serialize_compact(item, **kwargs)


# ---------------------------------------------------------------------------
# Context assembly


@dataclass(frozen=True)
class ContextSpec:
    n_shots: int = 20
    format: SerializationFormat = SerializationFormat.FULL
    token_budget: int = DEFAULT_TOKEN_BUDGET
    type_filter: TypeFilter = TypeFilter.NONE
    rng_seed: int = 0
    instruction: str = ""
    require_table: bool = True
    query_steps_kind: StepsKind = StepsKind.PROGRAM

    def __post_init__(self) -> None:
        if self.n_shots < 0:
            raise ValueError("n_shots must be >= 0")
        if self.token_budget <= 0:
            raise ValueError("token_budget must be positive")


@dataclass(frozen=True)
class AssembledContext:
    shot_ids: tuple[str, ...]
    text: str
    digest: str
    token_estimate: int
    format_version: str = FORMAT_VERSION


def _meta_matches(filter_: TypeFilter, shot: SampleMeta, query: SampleMeta) -> bool:
    if filter_ is TypeFilter.NONE:
        return True
    if shot.question_type is not query.question_type:
        return False
    if filter_ is TypeFilter.QA_TYPE and shot.answer_type is not query.answer_type:
        return False
    return True


def eligible_shots(
    pool: Sequence[Demonstration], query: Sample, type_filter: TypeFilter
) -> list[Demonstration]:
    """Pool members passing the type filter, in stable id order."""
    keep = [d for d in pool if _meta_matches(type_filter, d.sample.meta, query.meta)]
    keep.sort(key=lambda d: d.id)
    return keep


def assemble_context(
    spec: ContextSpec,
    query: Sample,
    pool: Sequence[Demonstration],
    *,
    estimator: Callable[[str], int] = estimate_tokens,
) -> AssembledContext:
    """Sample shots, serialize, and trim from the tail to fit the budget.

    Deterministic given (pool, spec, query): the shot subset comes from
    random.Random(spec.rng_seed), and overflow drops the later-sampled
    shots first. The query block itself is never truncated.
    """
    eligible = eligible_shots(pool, query, spec.type_filter)
    if spec.n_shots > 0 and not eligible:
        raise EmptyEligiblePool(
            f"no pool members match filter {spec.type_filter.value} for query {query.id}"
        )
    rng = random.Random(spec.rng_seed)
    n = min(spec.n_shots, len(eligible))
    shots = rng.sample(eligible, n) if n else []

    query_text = serialize(
        query,
        spec.format,
        require_table=spec.require_table,
        as_query=True,
        query_steps_kind=spec.query_steps_kind,
    )
    header = spec.instruction + "\n\n" if spec.instruction else ""

    def context_text(selected: Sequence[Demonstration]) -> str:
        blocks = [
            serialize(d, spec.format, require_table=spec.require_table) for d in selected
        ]
        return header + "".join(b + "\n" for b in blocks)

    while True:
        text = context_text(shots)
        estimate = estimator(text + query_text)
        if estimate <= spec.token_budget:
            break
        if not shots:
            raise QueryAloneExceedsBudget(
                f"query {query.id} alone estimates {estimate} tokens "
                f"over budget {spec.token_budget}"
            )
        shots = shots[:-1]

    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    return AssembledContext(
        shot_ids=tuple(d.id for d in shots),
        text=text,
        digest=digest,
        token_estimate=estimate,
    )


def build_prompt(context: AssembledContext, query: Sample, spec: ContextSpec) -> str:
    """Final prompt string: assembled context followed by the query block."""
    query_text = serialize(
        query,
        spec.format,
        require_table=spec.require_table,
        as_query=True,
        query_steps_kind=spec.query_steps_kind,
    )
    return context.text + query_text
