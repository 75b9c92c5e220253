"""Analysis artifacts as plain data files: difficulty CDF, shot success-rate
histogram, pool-stage counts, K-NN good-shot rank distribution, and the
shots-vs-accuracy curve. Everything is recomputable from the run's JSONL
by a one-pass script; these emitters just do that pass.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .core import Demonstration, DemoForgeError, Pool, UtilityRecord
from .refine import OneShotResult
from .similarity import (
    EmbeddingBackend,
    MockEmbeddingBackend,
    RankDistribution,
    good_shot_distribution,
    rank_pool,
)
from .store import MissingPool, RunDir, scan_records


class MissingScores(DemoForgeError):
    pass


def difficulty_cdf(scored: Mapping[str, Demonstration] | Sequence[Demonstration]) -> list[tuple[int, int]]:
    """(K, members with k <= K) for K = 1..N; nondecreasing, ends at pool size."""
    demos = list(scored.values()) if isinstance(scored, Mapping) else list(scored)
    if not demos:
        return []
    ks = []
    n = 0
    for demo in demos:
        if demo.difficulty is None:
            raise MissingScores(f"demonstration {demo.id} has no difficulty score")
        ks.append(demo.difficulty.k)
        n = max(n, demo.difficulty.n)
    return [(k_cut, sum(1 for k in ks if k <= k_cut)) for k_cut in range(1, n + 1)]


@dataclass(frozen=True)
class HistogramBin:
    lo_percent: float  # inclusive
    hi_percent: float  # exclusive, except the last bin
    count: int


def success_rate_histogram(
    records: Mapping[str, UtilityRecord] | Sequence[UtilityRecord],
    bin_width_percent: float = 5.0,
    min_solve_rate: Fraction = Fraction(1, 10),
) -> tuple[list[HistogramBin], float]:
    """Bins over solve rate in percent; returns (bins, threshold cut in percent)."""
    values = records.values() if isinstance(records, Mapping) else records
    rates = [float(r.rate) * 100.0 for r in values]
    bins: list[HistogramBin] = []
    lo = 0.0
    while lo < 100.0:
        hi = min(lo + bin_width_percent, 100.0)
        last = hi >= 100.0
        count = sum(1 for r in rates if lo <= r < hi or (last and r == hi))
        bins.append(HistogramBin(lo, hi, count))
        lo = hi
    return bins, float(min_solve_rate) * 100.0


def pool_table_csv(a: int, b: int, c: int, unsolved: int) -> str:
    """Table-1-shaped CSV: pool sizes per stage plus the unsolved count."""
    if not a >= b >= c:
        raise DemoForgeError(f"pool sizes must be monotone A >= B >= C, got {a}, {b}, {c}")
    return "Pool A,Pool B,Pool C,Unsolved Samples\n" f"{a},{b},{c},{unsolved}\n"


def pool_table(run: RunDir) -> str:
    sizes = {}
    for stage, filename in (("a", "pool_a.jsonl"), ("b", "pool_b.jsonl"), ("c", "pool_c.jsonl")):
        pool, _ = run.load_pool(filename)
        sizes[stage] = len(pool.member_ids)
    unsolved = sum(1 for _ in scan_records(run.path("unsolved.jsonl"), "sample"))
    return pool_table_csv(sizes["a"], sizes["b"], sizes["c"], unsolved)


# ---------------------------------------------------------------------------
# Whole-run emission


def _load_one_shot_results(run: RunDir) -> list[OneShotResult]:
    from .core import Verdict

    out = []
    for doc in scan_records(run.path("one_shot_results.jsonl"), "one_shot"):
        out.append(
            OneShotResult(
                shot_id=doc["shot_id"],
                query_id=doc["query_id"],
                verdict=Verdict(doc["verdict"]),
            )
        )
    return out


def knn_rank_distribution(
    run: RunDir, backend: EmbeddingBackend | None = None
) -> RankDistribution:
    """Rank pool-B shots per campaign query and locate the good shots."""
    from .harvest import load_unsolved

    backend = backend or MockEmbeddingBackend()
    _, demos_b = run.load_pool("pool_b.jsonl")
    results = _load_one_shot_results(run)
    queries = {s.id: s for s in load_unsolved(run)}
    needed = {r.query_id for r in results}
    rankings = {
        qid: [sid for sid, _ in rank_pool(queries[qid], list(demos_b.values()), backend)]
        for qid in sorted(needed)
    }
    return good_shot_distribution(results, rankings)


def shots_curve_rows(run: RunDir) -> list[dict]:
    """(n_shots, accuracy) pairs from every evaluation summary in the run."""
    rows = [
        {
            "n_shots": doc["n_shots"],
            "n_attempts": doc["n_attempts"],
            "accuracy": doc["accuracy"],
            "config_digest": doc["config_digest"],
        }
        for doc in scan_records(run.path("evaluations.jsonl"), "eval_summary")
    ]
    rows.sort(key=lambda r: (r["n_shots"], r["config_digest"]))
    return rows


def write_stats(
    run: RunDir,
    out_dir: Path | str,
    *,
    bin_width_percent: float = 5.0,
    min_solve_rate: Fraction = Fraction(1, 10),
    embedding_backend: EmbeddingBackend | None = None,
) -> dict[str, str]:
    """Emit all stats CSVs for a run; returns {artifact name: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, str] = {}

    _, demos_a = run.load_pool("pool_a.jsonl")
    cdf = difficulty_cdf(demos_a)
    path = out / "difficulty_cdf.csv"
    path.write_text(
        "K,members_with_k_at_most_K\n" + "".join(f"{k},{c}\n" for k, c in cdf),
        encoding="utf-8",
    )
    written["difficulty_cdf"] = str(path)

    _, demos_b = run.load_pool("pool_b.jsonl")
    utilities: dict[str, UtilityRecord] = {}
    results = _load_one_shot_results(run)
    for r in results:
        u = utilities.get(r.shot_id, UtilityRecord(0, 0))
        utilities[r.shot_id] = UtilityRecord(
            uses=u.uses + 1, solves=u.solves + (1 if r.verdict.value == "correct" else 0)
        )
    bins, cut = success_rate_histogram(utilities, bin_width_percent, min_solve_rate)
    path = out / "shot_hist.csv"
    path.write_text(
        f"lo_percent,hi_percent,count,threshold_percent\n"
        + "".join(f"{b.lo_percent},{b.hi_percent},{b.count},{cut}\n" for b in bins),
        encoding="utf-8",
    )
    written["shot_hist"] = str(path)

    path = out / "pool_table.csv"
    path.write_text(pool_table(run), encoding="utf-8")
    written["pool_table"] = str(path)

    dist = knn_rank_distribution(run, embedding_backend)
    path = out / "knn_rank_dist.csv"
    path.write_text(
        "rank,count\n" + "".join(f"{r},{c}\n" for r, c in dist.rank_counts().items()),
        encoding="utf-8",
    )
    written["knn_rank_dist"] = str(path)

    rows = shots_curve_rows(run)
    path = out / "shots_curve.csv"
    path.write_text(
        "n_shots,n_attempts,accuracy,config_digest\n"
        + "".join(
            f"{r['n_shots']},{r['n_attempts']},{r['accuracy']},{r['config_digest']}\n"
            for r in rows
        ),
        encoding="utf-8",
    )
    written["shots_curve"] = str(path)

    summary = {
        "pool_a": len(demos_a),
        "pool_b": len(demos_b),
        "good_shot_mean_normalized_rank": dist.mean_normalized_rank,
        "histogram_total": sum(b.count for b in bins),
    }
    path = out / "stats_summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written["summary"] = str(path)
    return written
