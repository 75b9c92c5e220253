"""Part III: multi-context inference with majority voting.

Every attempt gets a fresh context sampled from the refined pool with a
seed derived from (run seed, query id, attempt index); failed attempts
(parse/execution/backend errors) are excluded from the vote, and the
most frequent normalized answer wins. Ties break toward the answer
whose first occurrence has the lowest attempt index.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

from .core import (
    Answer,
    Attempt,
    Demonstration,
    DemoForgeError,
    LanguageTag,
    Sample,
    StepsKind,
    Verdict,
    answers_equal,
)
from .engine import (
    LedgerWriter,
    ProgramRunner,
    derive_seed,
    load_ledger,
    run_attempt,
    run_parallel,
)
from .harvest import _check_config, config_digest
from .llm import Backend
from .promptkit import ContextSpec, SerializationFormat, TypeFilter
from .store import RunDir, append_record, write_canonical

logger = logging.getLogger(__name__)

_INVALID = frozenset({Verdict.PARSE_ERROR, Verdict.EXECUTION_ERROR, Verdict.BACKEND_ERROR})


class EmptyVote(DemoForgeError):
    pass


class AllAttemptsFailed(DemoForgeError):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    n_attempts: int = 20
    n_shots: int = 20
    temperature: float = 0.5
    format: SerializationFormat = SerializationFormat.FULL
    type_filter: TypeFilter = TypeFilter.NONE
    seed: int = 0
    pool_file: str = "pool_c_merged.jsonl"
    token_budget: int = 16000
    language: LanguageTag = LanguageTag.DSL
    steps_kind: StepsKind = StepsKind.PROGRAM
    max_new_tokens: int = 512
    reuse_contexts: bool = False  # True reuses one context across a query's attempts
    require_table: bool = True
    instruction: str = ""

    def __post_init__(self) -> None:
        if self.n_attempts < 1:
            raise ValueError("n_attempts must be >= 1")


@dataclass(frozen=True)
class VoteOutcome:
    tally: Mapping[str, int]
    winner: Answer
    tie: bool
    n_valid: int


def majority_vote(answers: Sequence[Answer]) -> VoteOutcome:
    """Mode of the normalized answers; ties break to earliest first occurrence."""
    if not answers:
        raise EmptyVote("majority vote over zero valid answers")
    tally = Counter(a.normalized for a in answers)
    top = max(tally.values())
    tie = sum(1 for c in tally.values() if c == top) > 1
    for a in answers:  # earliest first occurrence among maximal classes
        if tally[a.normalized] == top:
            return VoteOutcome(tally=dict(tally), winner=a, tie=tie, n_valid=len(answers))
    raise AssertionError("unreachable")


def _context_spec(cfg: InferenceConfig, rng_seed: int) -> ContextSpec:
    return ContextSpec(
        n_shots=cfg.n_shots,
        format=cfg.format,
        token_budget=cfg.token_budget,
        type_filter=cfg.type_filter,
        rng_seed=rng_seed,
        instruction=cfg.instruction,
        require_table=cfg.require_table,
        query_steps_kind=cfg.steps_kind,
    )


def answer_query(
    query: Sample,
    pool: Sequence[Demonstration],
    cfg: InferenceConfig,
    backend: Backend,
    *,
    python_runner: ProgramRunner | None = None,
) -> tuple[VoteOutcome, list[Attempt]]:
    """Run n_attempts fresh-context generations and vote over the valid ones."""
    attempts = [
        _one_attempt(query, i, pool, cfg, backend, python_runner) for i in range(cfg.n_attempts)
    ]
    valid = [a.predicted for a in attempts if a.verdict not in _INVALID and a.predicted]
    if not valid:
        raise AllAttemptsFailed(f"query {query.id}: all {cfg.n_attempts} attempts failed")
    return majority_vote(valid), attempts


def _one_attempt(
    query: Sample,
    index: int,
    pool: Sequence[Demonstration],
    cfg: InferenceConfig,
    backend: Backend,
    python_runner: ProgramRunner | None,
) -> Attempt:
    context_key = 0 if cfg.reuse_contexts else index
    spec = _context_spec(cfg, derive_seed(cfg.seed, "infer", query.id, context_key))
    outcome = run_attempt(
        query,
        index,
        pool,
        spec,
        backend,
        temperature=cfg.temperature,
        language=cfg.language,
        steps_kind=cfg.steps_kind,
        python_runner=python_runner,
        max_new_tokens=cfg.max_new_tokens,
    )
    return outcome.attempt


@dataclass
class QueryOutcome:
    query_id: str
    gold: str
    winner: str | None
    tally: dict[str, int]
    tie: bool
    n_valid: int
    correct: bool
    all_failed: bool = False

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "gold": self.gold,
            "winner": self.winner,
            "tally": self.tally,
            "tie": self.tie,
            "n_valid": self.n_valid,
            "correct": self.correct,
            "all_failed": self.all_failed,
        }


@dataclass
class EvalReport:
    outcomes: list[QueryOutcome]
    config_digest: str
    n_shots: int
    n_attempts: int

    @property
    def accuracy(self) -> Fraction:
        if not self.outcomes:
            return Fraction(0)
        return Fraction(sum(1 for o in self.outcomes if o.correct), len(self.outcomes))

    @property
    def tie_rate(self) -> Fraction:
        if not self.outcomes:
            return Fraction(0)
        return Fraction(sum(1 for o in self.outcomes if o.tie), len(self.outcomes))

    @property
    def valid_rate(self) -> Fraction:
        total = len(self.outcomes) * self.n_attempts
        if total == 0:
            return Fraction(0)
        return Fraction(sum(o.n_valid for o in self.outcomes), total)

    def summary_json(self) -> dict:
        return {
            "accuracy": float(self.accuracy),
            "tie_rate": float(self.tie_rate),
            "valid_rate": float(self.valid_rate),
            "n_queries": len(self.outcomes),
            "n_shots": self.n_shots,
            "n_attempts": self.n_attempts,
            "config_digest": self.config_digest,
        }


def evaluate(
    queries: Sequence[Sample],
    pool: Sequence[Demonstration],
    cfg: InferenceConfig,
    backend: Backend,
    run: RunDir,
    *,
    workers: int = 1,
    python_runner: ProgramRunner | None = None,
    results_file: str = "results.jsonl",
) -> EvalReport:
    """Vote-and-score every query; emits results.jsonl plus a summary record."""
    run.init()
    digest = config_digest(cfg)
    _check_config(run, f"infer:{results_file}", digest)

    wal = run.wal_path(f"infer_{results_file.removesuffix('.jsonl')}")
    done = load_ledger(wal, "infer")
    writer = LedgerWriter(wal, "infer")
    tasks = [
        (query, i)
        for query in queries
        for i in range(cfg.n_attempts)
        if (query.id, i) not in done
    ]

    def one(task):
        query, i = task
        return _one_attempt(query, i, pool, cfg, backend, python_runner)

    run_parallel(tasks, one, workers, on_result=writer.append)

    ledger = load_ledger(wal, "infer")
    outcomes: list[QueryOutcome] = []
    for query in queries:
        attempts = []
        for i in range(cfg.n_attempts):
            doc = ledger.get((query.id, i))
            if doc is None:
                raise DemoForgeError(f"query {query.id} attempt {i} missing after run")
            attempts.append(Attempt.from_json(doc))
        valid = [a.predicted for a in attempts if a.verdict not in _INVALID and a.predicted]
        if not valid:
            outcomes.append(
                QueryOutcome(
                    query_id=query.id,
                    gold=query.gold_answer.raw,
                    winner=None,
                    tally={},
                    tie=False,
                    n_valid=0,
                    correct=False,
                    all_failed=True,
                )
            )
            continue
        vote = majority_vote(valid)
        outcomes.append(
            QueryOutcome(
                query_id=query.id,
                gold=query.gold_answer.raw,
                winner=vote.winner.raw,
                tally=dict(sorted(vote.tally.items())),
                tie=vote.tie,
                n_valid=vote.n_valid,
                correct=answers_equal(vote.winner, query.gold_answer),
            )
        )

    report = EvalReport(
        outcomes=outcomes,
        config_digest=digest,
        n_shots=cfg.n_shots,
        n_attempts=cfg.n_attempts,
    )
    records: list[tuple[str, dict]] = [("eval_summary", report.summary_json())]
    records.extend(("result", o.to_json()) for o in outcomes)
    write_canonical(run.path(results_file), records)
    append_record(run.path("evaluations.jsonl"), "eval_summary", report.summary_json())
    run.checkpoint(
        f"infer:{results_file}",
        {"config_digest": digest, **report.summary_json()},
    )
    return report
