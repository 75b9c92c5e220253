"""Part II: difficulty scoring, the hard-but-solvable filter (pool B),
the one-shot utility campaign against unsolved samples, and pool C.

Difficulty is k/N from the harvest ledger. Pool B keeps members with
1 <= k and D <= threshold (inclusive by default; strictness is a
config knob because the source material is self-contradictory there).
The campaign pairs every pool-B shot with a seeded random set of
unsolved queries, one deterministic zero-temperature attempt per pair.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

from .core import (
    Attempt,
    Demonstration,
    DemoForgeError,
    DifficultyScore,
    LanguageTag,
    Pool,
    PoolStage,
    Sample,
    StepsKind,
    UtilityRecord,
    Verdict,
    assert_pool_subset,
)
from .engine import (
    LedgerWriter,
    ProgramRunner,
    derive_seed,
    load_ledger,
    run_attempt,
    run_parallel,
)
from .harvest import ConfigMismatch, _check_config, config_digest, load_unsolved
from .llm import Backend
from .promptkit import ContextSpec
from .store import RunDir, scan_records, write_canonical


class MissingAttempts(DemoForgeError):
    pass


class EmptyPoolB(DemoForgeError):
    pass


class EmptyUnsolved(DemoForgeError):
    pass


@dataclass(frozen=True)
class RefineConfig:
    difficulty_threshold: Fraction = Fraction(1, 5)
    strict_threshold: bool = False  # True drops members exactly at the threshold
    min_uses: int = 100
    min_solve_rate: Fraction = Fraction(1, 10)
    one_shot_temperature: float = 0.0
    pairing_seed: int = 0
    language: LanguageTag = LanguageTag.DSL
    steps_kind: StepsKind = StepsKind.PROGRAM
    max_new_tokens: int = 512
    context: ContextSpec = field(default_factory=lambda: ContextSpec(n_shots=1))

    def __post_init__(self) -> None:
        if not 0 < self.difficulty_threshold <= 1:
            raise ValueError("difficulty_threshold must be in (0, 1]")
        if self.min_uses < 1:
            raise ValueError("min_uses must be >= 1")
        if not 0 < self.min_solve_rate <= 1:
            raise ValueError("min_solve_rate must be in (0, 1]")


@dataclass(frozen=True)
class OneShotResult:
    shot_id: str
    query_id: str
    verdict: Verdict

    def to_json(self) -> dict:
        return {
            "shot_id": self.shot_id,
            "query_id": self.query_id,
            "verdict": self.verdict.value,
        }


@dataclass
class CampaignReport:
    results: list[OneShotResult]
    utilities: dict[str, UtilityRecord]
    queries_solved_by_any: int
    total_queries: int
    shortfall: bool  # min_uses exceeded the number of available queries

    @property
    def solved_fraction(self) -> Fraction:
        if self.total_queries == 0:
            return Fraction(0)
        return Fraction(self.queries_solved_by_any, self.total_queries)


def score_difficulty(
    ledger: Mapping[tuple[str, int], Mapping],
    pool_a: Pool,
    demos: Mapping[str, Demonstration],
    n: int,
) -> dict[str, Demonstration]:
    """Attach k/N difficulty to every pool-A member from the attempt ledger."""
    scored: dict[str, Demonstration] = {}
    for sid in sorted(pool_a.member_ids):
        attempts = [ledger.get((sid, i)) for i in range(n)]
        if any(a is None for a in attempts):
            have = sum(1 for a in attempts if a is not None)
            raise MissingAttempts(f"pool member {sid} has {have}/{n} attempt records")
        k = sum(1 for a in attempts if a["verdict"] == Verdict.CORRECT.value)
        scored[sid] = replace(demos[sid], difficulty=DifficultyScore(k=k, n=n))
    return scored


def filter_pool_b(
    scored: Mapping[str, Demonstration], cfg: RefineConfig, parent: Pool
) -> tuple[Pool, dict[str, Demonstration]]:
    """Keep the solvable-but-hard members: 1 <= k and D at or under the threshold."""
    members: dict[str, Demonstration] = {}
    for sid, demo in scored.items():
        assert demo.difficulty is not None
        d = demo.difficulty
        if d.k < 1:
            continue
        if cfg.strict_threshold:
            hard = d.value < cfg.difficulty_threshold
        else:
            hard = d.value <= cfg.difficulty_threshold
        if hard:
            members[sid] = demo
    pool = Pool(
        name="pool_b",
        stage=PoolStage.B,
        member_ids=frozenset(members),
        lineage=parent.name,
        created_with=config_digest(cfg),
    )
    assert_pool_subset(pool, parent)
    return pool, members


def build_pairing(
    shot_ids: Sequence[str],
    query_ids: Sequence[str],
    min_uses: int,
    pairing_seed: int,
) -> list[tuple[str, str]]:
    """Random balanced bipartite pairing: every shot draws min_uses distinct
    queries (all of them when fewer exist), seeded and order-stable."""
    queries = sorted(query_ids)
    per_shot = min(min_uses, len(queries))
    pairs: list[tuple[str, str]] = []
    for shot_id in sorted(shot_ids):
        rng = random.Random(derive_seed(pairing_seed, "pairing", shot_id))
        for query_id in rng.sample(queries, per_shot):
            pairs.append((shot_id, query_id))
    return pairs


def run_one_shot_campaign(
    pool_b_demos: Mapping[str, Demonstration],
    unsolved: Sequence[Sample],
    cfg: RefineConfig,
    backend: Backend,
    run: RunDir,
    *,
    workers: int = 1,
    python_runner: ProgramRunner | None = None,
) -> CampaignReport:
    """One zero-temperature attempt per (shot, query) pair, aggregated per shot."""
    if not pool_b_demos:
        raise EmptyPoolB("pool B is empty; nothing to evaluate")
    if not unsolved:
        raise EmptyUnsolved("no unsolved samples to use as campaign queries")

    query_by_id = {s.id: s for s in unsolved}
    pairs = build_pairing(
        sorted(pool_b_demos), sorted(query_by_id), cfg.min_uses, cfg.pairing_seed
    )
    shortfall = cfg.min_uses > len(query_by_id)

    wal = run.wal_path("one_shot")
    done = load_ledger(wal, "one_shot")
    writer = LedgerWriter(wal, "one_shot")

    def key_of(pair: tuple[str, str]) -> tuple[str, int]:
        # attempt ledger key: query id + a stable index for the shot
        return (f"{pair[1]}@{pair[0]}", 0)

    todo = [p for p in pairs if key_of(p) not in done]

    def one(pair: tuple[str, str]):
        shot_id, query_id = pair
        query = query_by_id[query_id]
        spec = replace(
            cfg.context,
            n_shots=1,
            rng_seed=derive_seed(cfg.pairing_seed, "one_shot", shot_id, query_id),
        )
        outcome = run_attempt(
            query,
            0,
            [pool_b_demos[shot_id]],
            spec,
            backend,
            temperature=cfg.one_shot_temperature,
            language=cfg.language,
            steps_kind=cfg.steps_kind,
            python_runner=python_runner,
            max_new_tokens=cfg.max_new_tokens,
        )
        attempt = outcome.attempt
        keyed = Attempt(
            sample_id=f"{query_id}@{shot_id}",
            attempt_index=0,
            context_id=attempt.context_id,
            completion=attempt.completion,
            verdict=attempt.verdict,
            parsed_steps=attempt.parsed_steps,
            predicted=attempt.predicted,
        )
        return keyed

    run_parallel(todo, one, workers, on_result=writer.append)

    ledger = load_ledger(wal, "one_shot")
    results: list[OneShotResult] = []
    for shot_id, query_id in pairs:
        doc = ledger.get((f"{query_id}@{shot_id}", 0))
        if doc is None:
            raise MissingAttempts(f"campaign pair ({shot_id}, {query_id}) has no record")
        results.append(
            OneShotResult(shot_id=shot_id, query_id=query_id, verdict=Verdict(doc["verdict"]))
        )

    uses: dict[str, int] = {sid: 0 for sid in pool_b_demos}
    solves: dict[str, int] = {sid: 0 for sid in pool_b_demos}
    solved_queries: set[str] = set()
    for r in results:
        uses[r.shot_id] += 1
        if r.verdict is Verdict.CORRECT:
            solves[r.shot_id] += 1
            solved_queries.add(r.query_id)
    utilities = {
        sid: UtilityRecord(uses=uses[sid], solves=solves[sid]) for sid in sorted(pool_b_demos)
    }

    write_canonical(
        run.path("one_shot_results.jsonl"),
        (("one_shot", r.to_json()) for r in results),
    )
    return CampaignReport(
        results=results,
        utilities=utilities,
        queries_solved_by_any=len(solved_queries),
        total_queries=len(query_by_id),
        shortfall=shortfall,
    )


def filter_pool_c(
    pool_b_demos: Mapping[str, Demonstration],
    utilities: Mapping[str, UtilityRecord],
    cfg: RefineConfig,
    parent: Pool,
) -> tuple[Pool, dict[str, Demonstration]]:
    """Keep proven shots: uses >= min_uses and solve rate >= min_solve_rate."""
    members: dict[str, Demonstration] = {}
    for sid in sorted(pool_b_demos):
        utility = utilities.get(sid)
        if utility is None:
            continue
        if utility.uses >= cfg.min_uses and utility.rate >= cfg.min_solve_rate:
            members[sid] = replace(pool_b_demos[sid], utility=utility)
    pool = Pool(
        name="pool_c",
        stage=PoolStage.C,
        member_ids=frozenset(members),
        lineage=parent.name,
        created_with=config_digest(cfg),
    )
    assert_pool_subset(pool, parent)
    return pool, members


@dataclass
class RefineReport:
    pool_b: Pool
    pool_c: Pool
    merged: Pool
    campaign: CampaignReport
    scored: dict[str, Demonstration]


def refine(
    cfg: RefineConfig,
    backend: Backend,
    run: RunDir,
    *,
    workers: int = 1,
    python_runner: ProgramRunner | None = None,
) -> RefineReport:
    """Full Part II over an existing harvest run directory."""
    run.init()
    digest = config_digest(cfg)
    _check_config(run, "refine", digest)
    pool_a, demos_a = run.load_pool("pool_a.jsonl")
    manifest = run.read_checkpoint("harvest") or {}
    unsolved = load_unsolved(run)

    ledger = load_ledger(run.path("attempts.jsonl"), "harvest")
    n = int(manifest.get("attempts_per_sample") or max((k[1] for k in ledger), default=0) + 1)
    scored = score_difficulty(ledger, pool_a, demos_a, n)

    pool_b, demos_b = filter_pool_b(scored, cfg, pool_a)
    if not demos_b:
        logging.getLogger(__name__).warning(
            "pool B is empty at threshold %s", cfg.difficulty_threshold
        )
    campaign = run_one_shot_campaign(
        demos_b, unsolved, cfg, backend, run,
        workers=workers, python_runner=python_runner,
    )
    pool_c, demos_c = filter_pool_c(demos_b, campaign.utilities, cfg, pool_b)

    seed_pool, seed_demos = run.load_pool("seed_pool.jsonl")
    merged_demos = dict(demos_c)
    for sid, demo in seed_demos.items():
        merged_demos.setdefault(sid, demo)
    merged = Pool(
        name="pool_c_merged",
        stage=PoolStage.MERGED,
        member_ids=frozenset(merged_demos),
        lineage=pool_c.name,
        created_with=digest,
    )

    # lineage invariants (fail the run loudly if violated)
    assert_pool_subset(pool_c, pool_b)
    assert_pool_subset(pool_b, pool_a)

    run.save_pool("pool_b.jsonl", pool_b, demos_b.values())
    run.save_pool("pool_c.jsonl", pool_c, demos_c.values())
    run.save_pool("pool_c_merged.jsonl", merged, merged_demos.values())
    run.checkpoint(
        "refine",
        {
            "config_digest": digest,
            "pool_b_size": len(demos_b),
            "pool_c_size": len(demos_c),
            "pairs": len(campaign.results),
            "queries_solved_by_any": campaign.queries_solved_by_any,
            "total_queries": campaign.total_queries,
            "shortfall": campaign.shortfall,
        },
    )
    return RefineReport(
        pool_b=pool_b, pool_c=pool_c, merged=merged, campaign=campaign, scored=scored
    )
