"""Part I: run the baseline prompt over weakly labeled data and keep the
samples whose generated intermediate steps reproduce the gold answer.

Each of the N attempts per sample gets a fresh seeded context drawn from
the handcrafted seed pool. A sample enters pool A iff at least one
attempt verifies; its demonstration uses the steps from the first
correct attempt and carries k/N as its difficulty, so refinement needs
no second pass over the backend.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .core import (
    Demonstration,
    DemoForgeError,
    DifficultyScore,
    LanguageTag,
    Pool,
    PoolStage,
    Provenance,
    Sample,
    StepsKind,
    assert_disjoint,
)
from .engine import (
    LedgerWriter,
    ProgramRunner,
    derive_seed,
    load_ledger,
    run_attempt,
    run_parallel,
    verify_steps,
)
from .core import Attempt, Verdict
from .llm import Backend, BackendError
from .promptkit import ContextSpec
from .store import RunDir, write_canonical


class HarvestVerificationError(DemoForgeError):
    """A pool-A demonstration failed its post-pass re-execution."""


class ConfigMismatch(DemoForgeError):
    """A run directory holds state from a different configuration."""


@dataclass(frozen=True)
class HarvestConfig:
    subset_size: int = 3500
    attempts_per_sample: int = 20
    temperature: float = 0.5
    root_seed: int = 0
    language: LanguageTag = LanguageTag.DSL
    steps_kind: StepsKind = StepsKind.PROGRAM
    max_new_tokens: int = 512
    context: ContextSpec = field(default_factory=ContextSpec)

    def __post_init__(self) -> None:
        if self.attempts_per_sample < 1:
            raise ValueError("attempts_per_sample must be >= 1")


def config_digest(cfg) -> str:
    """Stable digest of any dataclass-ish config for lineage tracking."""
    import enum

    def plain(value):
        if hasattr(value, "__dataclass_fields__"):
            return {k: plain(getattr(value, k)) for k in value.__dataclass_fields__}
        if isinstance(value, (list, tuple)):
            return [plain(v) for v in value]
        if isinstance(value, enum.Enum):
            return value.value
        if value is None or isinstance(value, (str, int, float, bool)):
            return value
        return str(value)  # Fractions and friends

    body = json.dumps(plain(cfg), sort_keys=True)
    return hashlib.sha256(body.encode("utf-8")).hexdigest()[:16]


@dataclass
class HarvestReport:
    pool_a: Pool
    unsolved_ids: frozenset[str]
    indeterminate_ids: frozenset[str]
    success_counts: dict[str, int]
    attempts_file: str = "attempts.jsonl"


def _check_config(run: RunDir, stage: str, digest: str) -> None:
    manifest = run.read_checkpoint(stage)
    if manifest and manifest.get("config_digest") not in (None, digest):
        raise ConfigMismatch(
            f"run dir {run.root} holds a {stage} checkpoint for config "
            f"{manifest['config_digest']}, current config is {digest}; use a fresh run dir"
        )


def harvest(
    samples: Sequence[Sample],
    seed_demos: Sequence[Demonstration],
    cfg: HarvestConfig,
    backend: Backend,
    run: RunDir,
    *,
    workers: int = 1,
    python_runner: ProgramRunner | None = None,
) -> HarvestReport:
    """Issue N verified attempts per sample and emit pool A + the unsolved set."""
    run.init()
    digest = config_digest(cfg)
    _check_config(run, "harvest", digest)
    subset = list(samples[: cfg.subset_size])
    by_id = {s.id: s for s in subset}

    seed_pool = Pool(
        name="seed",
        stage=PoolStage.HANDCRAFTED,
        member_ids=frozenset(d.id for d in seed_demos),
        created_with=digest,
    )
    if not run.path("seed_pool.jsonl").exists():
        run.save_pool("seed_pool.jsonl", seed_pool, seed_demos)

    wal = run.wal_path("harvest")
    done = load_ledger(wal, "harvest")
    writer = LedgerWriter(wal, "harvest")
    n = cfg.attempts_per_sample

    tasks = [
        (sample, i)
        for sample in subset
        for i in range(n)
        if (sample.id, i) not in done
    ]

    def one(task):
        sample, i = task
        spec = replace(
            cfg.context, rng_seed=derive_seed(cfg.root_seed, "harvest", sample.id, i)
        )
        outcome = run_attempt(
            sample,
            i,
            seed_demos,
            spec,
            backend,
            temperature=cfg.temperature,
            language=cfg.language,
            steps_kind=cfg.steps_kind,
            python_runner=python_runner,
            max_new_tokens=cfg.max_new_tokens,
        )
        return outcome.attempt

    run_parallel(tasks, one, workers, on_result=writer.append)

    all_records = load_ledger(wal, "harvest")
    order = {s.id: pos for pos, s in enumerate(subset)}
    canonical = sorted(
        (doc for key, doc in all_records.items() if key[0] in by_id),
        key=lambda d: (order[d["sample_id"]], d["attempt_index"]),
    )
    write_canonical(run.path("attempts.jsonl"), (("attempt", doc) for doc in canonical))

    demos: list[Demonstration] = []
    success_counts: dict[str, int] = {}
    unsolved: list[str] = []
    indeterminate: list[str] = []
    for sample in subset:
        attempts = [
            Attempt.from_json(all_records[(sample.id, i)])
            for i in range(n)
            if (sample.id, i) in all_records
        ]
        if len(attempts) != n:
            raise DemoForgeError(
                f"sample {sample.id} has {len(attempts)}/{n} attempts after the run"
            )
        k = sum(1 for a in attempts if a.verdict is Verdict.CORRECT)
        success_counts[sample.id] = k
        if k >= 1:
            first = next(a for a in attempts if a.verdict is Verdict.CORRECT)
            assert first.parsed_steps is not None
            demos.append(
                Demonstration(
                    sample=sample,
                    steps=first.parsed_steps,
                    provenance=Provenance.HARVESTED,
                    difficulty=DifficultyScore(k=k, n=n),
                )
            )
        elif all(a.verdict is Verdict.BACKEND_ERROR for a in attempts):
            indeterminate.append(sample.id)
        else:
            unsolved.append(sample.id)

    if subset and len(indeterminate) == len(subset):
        raise BackendError(
            f"all {len(subset)} samples ended with backend errors on every attempt; "
            "check the backend configuration",
            retryable=False,
        )

    # verification soundness: every stored demonstration must still reproduce gold
    for demo in demos:
        if not verify_steps(demo.steps, demo.sample, python_runner=python_runner):
            raise HarvestVerificationError(
                f"demonstration {demo.id} failed re-execution against its gold answer"
            )

    pool_a = Pool(
        name="pool_a",
        stage=PoolStage.A,
        member_ids=frozenset(d.id for d in demos),
        created_with=digest,
    )
    unsolved_ids = frozenset(unsolved)
    assert_disjoint(pool_a, unsolved_ids, "the unsolved set")

    run.save_pool("pool_a.jsonl", pool_a, demos)
    write_canonical(
        run.path("unsolved.jsonl"),
        (("sample", by_id[sid].to_json()) for sid in sorted(unsolved_ids)),
    )
    run.checkpoint(
        "harvest",
        {
            "config_digest": digest,
            "attempts_per_sample": n,
            "completed_sample_ids": sorted(by_id),
            "pool_a_size": len(demos),
            "unsolved": len(unsolved_ids),
            "indeterminate": sorted(indeterminate),
            "attempts": len(canonical),
        },
    )
    return HarvestReport(
        pool_a=pool_a,
        unsolved_ids=unsolved_ids,
        indeterminate_ids=frozenset(indeterminate),
        success_counts=success_counts,
    )


def load_unsolved(run: RunDir) -> list[Sample]:
    from .store import scan_records

    return [
        Sample.from_json(doc)
        for doc in scan_records(run.path("unsolved.jsonl"), "sample")
    ]
