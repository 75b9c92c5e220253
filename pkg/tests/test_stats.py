"""Stats emitters: CDF, histograms, pool table, rank distributions, curves."""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import pytest

from demo_forge.core import Demonstration, DemoForgeError, UtilityRecord
from demo_forge.harvest import load_unsolved
from demo_forge.infer import InferenceConfig, evaluate
from demo_forge.llm import ScriptedBackend
from demo_forge.refine import RefineConfig, refine
from demo_forge.stats import (
    difficulty_cdf,
    pool_table,
    pool_table_csv,
    success_rate_histogram,
    write_stats,
)
from demo_forge.store import RunDir

from test_refine import make_harvest_run, _refine_cfg
from worlds import hash_solver, one_shot_backend

GOLDENS = Path(__file__).parent / "goldens"


def _scored_demos(tmp_path, **kw):
    run, samples, programs, report = make_harvest_run(tmp_path, **kw)
    from demo_forge.engine import load_ledger
    from demo_forge.refine import score_difficulty

    ledger = load_ledger(run.path("attempts.jsonl"), "harvest")
    pool_a, demos_a = run.load_pool("pool_a.jsonl")
    return run, samples, programs, report, score_difficulty(ledger, pool_a, demos_a, 20)


def test_cdf_nondecreasing_and_ends_at_pool_size(tmp_path):
    _, _, _, _, scored = _scored_demos(tmp_path, n_samples=50)
    cdf = difficulty_cdf(scored)
    assert [k for k, _ in cdf] == list(range(1, 21))
    counts = [c for _, c in cdf]
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == len(scored)


def test_cdf_matches_independent_count(tmp_path):
    _, _, _, _, scored = _scored_demos(tmp_path, n_samples=70, seed=111)
    cdf = dict(difficulty_cdf(scored))
    for k_cut in range(1, 21):
        ref = sum(1 for d in scored.values() if d.difficulty.k <= k_cut)
        assert cdf[k_cut] == ref


def test_cdf_all_members_at_k_equals_n():
    from dataclasses import replace

    from demo_forge.core import DifficultyScore
    from worlds import build_seed_pool

    demos = {
        d.id: replace(d, difficulty=DifficultyScore(k=20, n=20)) for d in build_seed_pool(5)
    }
    cdf = difficulty_cdf(demos)
    assert all(count == 0 for k, count in cdf[:-1])
    assert cdf[-1] == (20, 5)


def test_histogram_bins_sum_to_pool_size():
    records = {
        f"b{i}": UtilityRecord(uses=20, solves=i % 21) for i in range(40)
    }
    bins, cut = success_rate_histogram(records, bin_width_percent=10)
    assert sum(b.count for b in bins) == 40
    assert cut == 10.0


def test_histogram_single_record():
    bins, _ = success_rate_histogram([UtilityRecord(uses=10, solves=3)])
    hot = [b for b in bins if b.count]
    assert len(hot) == 1
    assert hot[0].count == 1
    assert hot[0].lo_percent <= 30.0 < hot[0].hi_percent


def test_histogram_full_rate_lands_in_last_bin():
    bins, _ = success_rate_histogram([UtilityRecord(uses=5, solves=5)], bin_width_percent=25)
    assert bins[-1].count == 1


def test_histogram_matches_independent_binning():
    import random

    rng = random.Random(33)
    records = [UtilityRecord(uses=50, solves=rng.randint(0, 50)) for _ in range(200)]
    bins, _ = success_rate_histogram(records, bin_width_percent=5)
    for b in bins:
        last = b.hi_percent >= 100.0
        ref = sum(
            1
            for r in records
            if b.lo_percent <= float(r.rate) * 100 < b.hi_percent
            or (last and float(r.rate) * 100 == b.hi_percent)
        )
        assert b.count == ref


def test_pool_table_golden_layout():
    assert pool_table_csv(2057, 429, 135, 1433) == (GOLDENS / "pool_table.csv").read_text()


def test_pool_table_zeros():
    assert pool_table_csv(0, 0, 0, 0) == "Pool A,Pool B,Pool C,Unsolved Samples\n0,0,0,0\n"


def test_pool_table_rejects_non_monotone():
    with pytest.raises(DemoForgeError):
        pool_table_csv(5, 6, 2, 0)


# ---------------------------------------------------------------------------
# Whole-run emission


def _full_run(tmp_path):
    run, samples, programs, report = make_harvest_run(tmp_path, n_samples=60, seed=113)
    solver = hash_solver(
        {sid: (i % 4) for i, sid in enumerate(sorted(report.pool_a.member_ids))}
    )
    refine(_refine_cfg(min_uses=10, pairing_seed=4), one_shot_backend(solver, programs), run)
    queries = samples[:10]
    backend = ScriptedBackend(lambda route, req: programs[route.sample_id])
    for shots in (2, 4):
        evaluate(
            queries,
            list(run.load_pool("pool_c_merged.jsonl")[1].values()),
            InferenceConfig(n_attempts=3, n_shots=shots, seed=1),
            backend,
            run,
            results_file=f"results_{shots}.jsonl",
        )
    return run, samples


def test_write_stats_emits_all_artifacts(tmp_path):
    run, samples = _full_run(tmp_path)
    out = tmp_path / "stats"
    written = write_stats(run, out)
    for name in ("difficulty_cdf", "shot_hist", "pool_table", "knn_rank_dist", "shots_curve", "summary"):
        assert name in written
        assert Path(written[name]).exists()

    # pool_table matches a manual recount of stored pools
    pool_a, _ = run.load_pool("pool_a.jsonl")
    pool_b, _ = run.load_pool("pool_b.jsonl")
    pool_c, _ = run.load_pool("pool_c.jsonl")
    unsolved = len(load_unsolved(run))
    expected = pool_table_csv(
        len(pool_a.member_ids), len(pool_b.member_ids), len(pool_c.member_ids), unsolved
    )
    assert (out / "pool_table.csv").read_text() == expected

    # shots curve has one row per evaluation, sorted by n_shots
    lines = (out / "shots_curve.csv").read_text().strip().splitlines()
    assert lines[0] == "n_shots,n_attempts,accuracy,config_digest"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [2, 4]

    # histogram counts add up to |B|
    hist_lines = (out / "shot_hist.csv").read_text().strip().splitlines()[1:]
    total = sum(int(l.split(",")[2]) for l in hist_lines)
    assert total == len(pool_b.member_ids)

    # rank distribution counts equal the number of correct one-shot results
    from demo_forge.store import scan_records

    n_good = sum(
        1
        for d in scan_records(run.path("one_shot_results.jsonl"), "one_shot")
        if d["verdict"] == "correct"
    )
    rank_lines = (out / "knn_rank_dist.csv").read_text().strip().splitlines()[1:]
    assert sum(int(l.split(",")[1]) for l in rank_lines) == n_good
