"""Shared machinery for issuing LLM attempts and judging completions.

One attempt = assemble context, generate, parse the completion into
intermediate steps, execute/continue them, and compare the predicted
answer with gold. Everything here is a pure function of the task
parameters (seeds included), so stages can run attempts in any order on
any number of workers and still produce identical ledgers.
"""
from __future__ import annotations

import hashlib
import re
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .core import (
    Answer,
    Attempt,
    IntermediateSteps,
    LanguageTag,
    Sample,
    StepsKind,
    Verdict,
    answers_equal,
)
from .dsl import DslEvalError, DslParseError, eval_program, parse_program, print_program
from .llm import Backend, BackendError, GenRequest, GenRoute
from .promptkit import AssembledContext, ContextSpec, assemble_context, build_prompt
from .store import append_record, scan_records


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from arbitrary key parts (no process-salted hash)."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


class ProgramRunner(Protocol):
    """Executes non-DSL program steps (e.g. the Python sidecar client)."""

    def run(self, program: str, sample: Sample) -> tuple[str, str | None, str, str]:
        """Returns (status, answer, error_kind, message); status ok/error/timeout."""
        ...


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_ANSWER_RE = re.compile(r"(?:the answer is|answer)\s*[:=]?\s*(.+?)\s*\.?\s*$", re.IGNORECASE)


def extract_program_text(completion: str) -> str:
    """Pull program source out of a completion: fenced block if present,
    otherwise everything before a leaked next-example boundary."""
    fenced = _FENCE_RE.search(completion)
    if fenced:
        return fenced.group(1).strip()
    body = completion.split("\nQuestion:")[0]
    return body.strip()


def extract_chain_answer(completion: str) -> str | None:
    """Final answer from a reasoning chain: last 'the answer is: X' style line."""
    found = None
    for line in completion.splitlines():
        m = _ANSWER_RE.search(line.strip())
        if m and m.group(1).strip():
            found = m.group(1).strip()
    return found


def judge_completion(
    completion: str,
    sample: Sample,
    *,
    steps_kind: StepsKind = StepsKind.PROGRAM,
    language: LanguageTag = LanguageTag.DSL,
    python_runner: ProgramRunner | None = None,
) -> tuple[IntermediateSteps | None, Answer | None, Verdict]:
    """Parse + execute a completion and judge it against the gold answer."""
    if steps_kind is StepsKind.REASONING_CHAIN:
        raw = extract_chain_answer(completion)
        if raw is None:
            return None, None, Verdict.PARSE_ERROR
        steps = IntermediateSteps(StepsKind.REASONING_CHAIN, completion.strip(), LanguageTag.FREEFORM)
        predicted = Answer(raw)
        verdict = Verdict.CORRECT if answers_equal(predicted, sample.gold_answer) else Verdict.WRONG
        return steps, predicted, verdict

    body = extract_program_text(completion)
    if language is LanguageTag.DSL:
        try:
            program = parse_program(body)
        except DslParseError:
            return None, None, Verdict.PARSE_ERROR
        steps = IntermediateSteps(StepsKind.PROGRAM, print_program(program), LanguageTag.DSL)
        try:
            predicted = eval_program(program, sample.table)
        except DslEvalError:
            return steps, None, Verdict.EXECUTION_ERROR
    elif language is LanguageTag.PYTHON:
        if python_runner is None:
            raise ValueError("python program steps require a program runner")
        steps = IntermediateSteps(StepsKind.PROGRAM, body, LanguageTag.PYTHON)
        status, answer, error_kind, _message = python_runner.run(body, sample)
        if status != "ok" or answer is None:
            if error_kind == "syntax_error":
                return None, None, Verdict.PARSE_ERROR
            return steps, None, Verdict.EXECUTION_ERROR
        predicted = Answer(answer)
    else:
        raise ValueError(f"no executor for language {language.value}")
    verdict = Verdict.CORRECT if answers_equal(predicted, sample.gold_answer) else Verdict.WRONG
    return steps, predicted, verdict


def verify_steps(
    steps: IntermediateSteps,
    sample: Sample,
    *,
    python_runner: ProgramRunner | None = None,
) -> bool:
    """Re-execute stored steps and check they still yield the gold answer."""
    _, _, verdict = judge_completion(
        steps.body,
        sample,
        steps_kind=steps.kind,
        language=steps.language_tag if steps.kind is StepsKind.PROGRAM else LanguageTag.FREEFORM,
        python_runner=python_runner,
    )
    return verdict is Verdict.CORRECT


# ---------------------------------------------------------------------------
# Attempt execution


@dataclass(frozen=True)
class AttemptOutcome:
    attempt: Attempt
    context: AssembledContext | None


def run_attempt(
    sample: Sample,
    attempt_index: int,
    pool,
    spec: ContextSpec,
    backend: Backend,
    *,
    temperature: float,
    language: LanguageTag = LanguageTag.DSL,
    steps_kind: StepsKind = StepsKind.PROGRAM,
    python_runner: ProgramRunner | None = None,
    max_new_tokens: int = 512,
) -> AttemptOutcome:
    """Assemble a context, call the backend once, judge the first choice."""
    context = assemble_context(spec, sample, pool)
    prompt = build_prompt(context, sample, spec)
    route = GenRoute(
        sample_id=sample.id,
        attempt_index=attempt_index,
        context_digest=context.digest,
        shot_ids=context.shot_ids,
    )
    req = GenRequest(
        prompt=prompt,
        temperature=temperature,
        max_new_tokens=max_new_tokens,
        seed=spec.rng_seed,
        route=route,
    )
    try:
        resp = backend.generate(req)
    except BackendError as exc:
        attempt = Attempt(
            sample_id=sample.id,
            attempt_index=attempt_index,
            context_id=context.digest,
            completion=f"<backend error: {exc}>",
            verdict=Verdict.BACKEND_ERROR,
        )
        return AttemptOutcome(attempt, context)
    completion = resp.choices[0].text
    steps, predicted, verdict = judge_completion(
        completion,
        sample,
        steps_kind=steps_kind,
        language=language,
        python_runner=python_runner,
    )
    attempt = Attempt(
        sample_id=sample.id,
        attempt_index=attempt_index,
        context_id=context.digest,
        completion=completion,
        verdict=verdict,
        parsed_steps=steps,
        predicted=predicted,
    )
    return AttemptOutcome(attempt, context)


# ---------------------------------------------------------------------------
# Parallel task running with WAL-based resume


@dataclass
class LedgerWriter:
    """Single-writer append channel for attempt records."""

    path: Path
    stage: str

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def append(self, attempt: Attempt, extra: dict | None = None) -> None:
        payload = attempt.to_json()
        payload["stage"] = self.stage
        if extra:
            payload.update(extra)
        with self._lock:
            append_record(self.path, "attempt", payload)


def load_ledger(path: Path, stage: str) -> dict[tuple[str, int], dict]:
    """Completed attempt records keyed by (sample_id, attempt_index)."""
    done: dict[tuple[str, int], dict] = {}
    for doc in scan_records(path, "attempt"):
        if doc.get("stage") != stage:
            continue
        done[(doc["sample_id"], int(doc["attempt_index"]))] = doc
    return done


def run_parallel(
    tasks: Sequence,
    fn: Callable,
    workers: int,
    *,
    on_result: Callable | None = None,
) -> list:
    """Run fn over tasks on a thread pool.

    on_result runs in the worker thread right after fn, so every
    completed task is persisted even if a later task aborts the run;
    that is what makes kill-and-restart resume exact. Collection order
    carries no meaning.
    """

    def wrapped(task):
        result = fn(task)
        if on_result is not None:
            on_result(result)
        return result

    if workers <= 1:
        return [wrapped(task) for task in tasks]
    results = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(wrapped, task) for task in tasks]
        for future in as_completed(futures):
            results.append(future.result())
    return results


class InflightGate:
    """Caps concurrent backend calls independent of worker count."""

    def __init__(self, backend: Backend, max_inflight: int):
        self._backend = backend
        self._sem = threading.Semaphore(max_inflight)
        self.backend_id = getattr(backend, "backend_id", "backend")

    def generate(self, req: GenRequest):
        with self._sem:
            return self._backend.generate(req)

    def __getattr__(self, item):
        return getattr(self._backend, item)
