"""Command-line entry point.

Subcommands: harvest, refine, infer, stats, knn-rank, validate-corpus.
Exit codes: 0 success, 1 usage error, 2 data error, 3 backend failure
after retries. Options resolve as CLI flags > environment (API key
only) > config file > built-in defaults; the resolved configuration is
written into the run directory so every run is reconstructible.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from .core import Demonstration, DemoForgeError
from .engine import InflightGate
from .harvest import HarvestConfig, config_digest, harvest
from .infer import InferenceConfig, evaluate
from .llm import (
    API_KEY_ENV,
    BackendError,
    HttpCompletionsBackend,
    ParametricBackend,
    ScriptedBackend,
)
from .promptkit import ContextSpec, SerializationFormat, TypeFilter
from .refine import RefineConfig, refine
from .sidecar import SidecarClient
from .similarity import MockEmbeddingBackend, rank_pool
from .stats import write_stats
from .store import CorpusError, RunDir, load_samples, scan_records
from . import __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

logger = logging.getLogger("demo_forge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1, not argparse's 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Config file: flat `key = value` lines, '#' comments, typed by the key table.

_CONFIG_TYPES = {
    "subset": int,
    "attempts": int,
    "shots": int,
    "seed": int,
    "pairing_seed": int,
    "min_uses": int,
    "budget": int,
    "max_new_tokens": int,
    "parallel": int,
    "max_inflight": int,
    "temperature": float,
    "one_shot_temperature": float,
    "threshold": Fraction,
    "min_rate": Fraction,
    "strict_threshold": bool,
    "format": str,
    "type_filter": str,
    "backend": str,
    "base_url": str,
    "model": str,
    "mock_spec": str,
    "instruction": str,
    "requests_per_minute": float,
    "sidecar_cmd": str,
    "language": str,
}


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    values: dict = {}
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise CorpusError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_TYPES:
            raise CorpusError(f"{path}: line {lineno}: unknown key {key!r}")
        caster = _CONFIG_TYPES[key]
        try:
            if caster is bool:
                values[key] = value.lower() in ("1", "true", "yes")
            else:
                values[key] = caster(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise CorpusError(f"{path}: line {lineno}: bad value for {key}: {exc}") from exc
    return values


def _resolve(flag, file_values: dict, key: str, default):
    if flag is not None:
        return flag
    if key in file_values:
        value = file_values[key]
        return type(default)(value) if default is not None and not isinstance(value, type(default)) else value
    return default


# ---------------------------------------------------------------------------
# Backend construction


def build_backend(kind: str, *, base_url: str, model: str, mock_spec: str, rpm: float | None):
    if kind == "http":
        if not base_url:
            raise UsageError("--base-url is required for the http backend")
        return HttpCompletionsBackend(
            base_url, model or "default", requests_per_minute=rpm
        )
    if kind in ("scripted", "parametric", "mock"):
        if not mock_spec:
            raise UsageError(f"--mock-spec is required for the {kind} backend")
        doc = json.loads(Path(mock_spec).read_text(encoding="utf-8"))
        mode = doc.get("mode", kind if kind != "mock" else "parametric")
        if mode == "scripted":
            completion_map = {}
            for key, text in doc.get("completions", {}).items():
                sid, _, idx = key.rpartition("|")
                completion_map[(sid, None, int(idx))] = text
            return ScriptedBackend(
                completion_map=completion_map, default=doc.get("default")
            )
        if mode == "parametric":
            return ParametricBackend(
                seed=int(doc.get("seed", 0)),
                base=float(doc.get("base", 0.0)),
                gain=float(doc.get("gain", 0.0)),
                useful_ids=frozenset(doc.get("useful_ids", [])),
                correct=doc.get("correct", {}),
                wrong=doc.get("wrong") or None,
            )
        raise UsageError(f"unknown mock spec mode {mode!r}")
    raise UsageError(f"unknown backend {kind!r} (expected http, scripted or parametric)")


def load_seed_pool(path: str) -> list[Demonstration]:
    demos = [Demonstration.from_json(doc) for doc in scan_records(Path(path), "demo")]
    if not demos:
        raise CorpusError(f"seed pool {path} contains no demo records")
    return demos


# ---------------------------------------------------------------------------
# Subcommands


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["http", "scripted", "parametric"], default=None)
    p.add_argument("--base-url", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--mock-spec", default=None, help="JSON behavior file for mock backends")
    p.add_argument("--requests-per-minute", type=float, default=None)
    p.add_argument("--parallel", type=int, default=None, help="worker threads")
    p.add_argument("--max-inflight", type=int, default=None, help="cap on concurrent backend calls")
    p.add_argument("--sidecar-cmd", default=None, help="command line for the python-exec sidecar")
    p.add_argument("--config", default=None, help="flat key=value config file")


def _common(args) -> dict:
    file_values = load_config_file(args.config)
    parallel = _resolve(args.parallel, file_values, "parallel", os.cpu_count() or 1)
    max_inflight = _resolve(args.max_inflight, file_values, "max_inflight", 8)
    backend_kind = _resolve(args.backend, file_values, "backend", "http")
    backend = build_backend(
        backend_kind,
        base_url=_resolve(args.base_url, file_values, "base_url", ""),
        model=_resolve(args.model, file_values, "model", ""),
        mock_spec=_resolve(args.mock_spec, file_values, "mock_spec", ""),
        rpm=_resolve(args.requests_per_minute, file_values, "requests_per_minute", None),
    )
    runner = None
    sidecar_cmd = _resolve(args.sidecar_cmd, file_values, "sidecar_cmd", "")
    if sidecar_cmd:
        runner = SidecarClient(sidecar_cmd.split())
    return {
        "file_values": file_values,
        "parallel": parallel,
        "backend": InflightGate(backend, max_inflight),
        "backend_kind": backend_kind,
        "runner": runner,
    }


def cmd_validate_corpus(args) -> int:
    samples = load_samples(args.corpus)
    print(f"{args.corpus}: {len(samples)} samples OK")
    return EXIT_OK


def cmd_harvest(args) -> int:
    c = _common(args)
    fv = c["file_values"]
    cfg = HarvestConfig(
        subset_size=_resolve(args.subset, fv, "subset", 3500),
        attempts_per_sample=_resolve(args.attempts, fv, "attempts", 20),
        temperature=_resolve(args.temperature, fv, "temperature", 0.5),
        root_seed=_resolve(args.seed, fv, "seed", 0),
        max_new_tokens=_resolve(None, fv, "max_new_tokens", 512),
        context=ContextSpec(
            n_shots=_resolve(args.context_shots, fv, "shots", 4),
            format=SerializationFormat(_resolve(args.format, fv, "format", "full")),
            token_budget=_resolve(args.budget, fv, "budget", 16000),
            instruction=_resolve(None, fv, "instruction", ""),
        ),
    )
    samples = load_samples(args.corpus)
    seed_demos = load_seed_pool(args.seed_pool)
    run = RunDir(args.out).init()
    run.record_config(
        "harvest",
        {
            "corpus": str(args.corpus),
            "seed_pool": str(args.seed_pool),
            "backend": c["backend_kind"],
            "parallel": c["parallel"],
            "digest": config_digest(cfg),
            **{k: str(v) for k, v in fv.items()},
        },
    )
    report = harvest(
        samples, seed_demos, cfg, c["backend"], run,
        workers=c["parallel"], python_runner=c["runner"],
    )
    print(
        f"pool A: {len(report.pool_a.member_ids)}  unsolved: {len(report.unsolved_ids)}  "
        f"indeterminate: {len(report.indeterminate_ids)}"
    )
    return EXIT_OK


def cmd_refine(args) -> int:
    c = _common(args)
    fv = c["file_values"]
    cfg = RefineConfig(
        difficulty_threshold=Fraction(_resolve(args.threshold, fv, "threshold", Fraction(1, 5))),
        strict_threshold=_resolve(args.strict_threshold, fv, "strict_threshold", False),
        min_uses=_resolve(args.min_uses, fv, "min_uses", 100),
        min_solve_rate=Fraction(_resolve(args.min_rate, fv, "min_rate", Fraction(1, 10))),
        one_shot_temperature=_resolve(None, fv, "one_shot_temperature", 0.0),
        pairing_seed=_resolve(args.seed, fv, "pairing_seed", 0),
        context=ContextSpec(
            n_shots=1,
            format=SerializationFormat(_resolve(args.format, fv, "format", "full")),
            token_budget=_resolve(None, fv, "budget", 16000),
        ),
    )
    run = RunDir(args.run)
    run.record_config("refine", {"digest": config_digest(cfg), "backend": c["backend_kind"]})
    report = refine(cfg, c["backend"], run, workers=c["parallel"], python_runner=c["runner"])
    frac = report.campaign.solved_fraction
    print(
        f"pool B: {len(report.pool_b.member_ids)}  pool C: {len(report.pool_c.member_ids)}  "
        f"queries solved by >=1 shot: {float(frac) * 100:.1f}%"
    )
    from .stats import pool_table

    (run.path("pool_table.csv")).write_text(pool_table(run), encoding="utf-8")
    return EXIT_OK


def cmd_infer(args) -> int:
    c = _common(args)
    fv = c["file_values"]
    cfg = InferenceConfig(
        n_attempts=_resolve(args.attempts, fv, "attempts", 20),
        n_shots=_resolve(args.shots, fv, "shots", 20),
        temperature=_resolve(args.temperature, fv, "temperature", 0.5),
        format=SerializationFormat(_resolve(args.format, fv, "format", "full")),
        type_filter=TypeFilter(_resolve(args.type_filter, fv, "type_filter", "none")),
        seed=_resolve(args.seed, fv, "seed", 0),
        pool_file=f"{args.pool}.jsonl" if not args.pool.endswith(".jsonl") else args.pool,
        token_budget=_resolve(None, fv, "budget", 16000),
        instruction=_resolve(None, fv, "instruction", ""),
    )
    run = RunDir(args.run)
    _, demos = run.load_pool(cfg.pool_file)
    queries = load_samples(args.corpus)
    run.record_config(
        f"infer:{args.out}",
        {"digest": config_digest(cfg), "corpus": str(args.corpus), "pool": cfg.pool_file},
    )
    report = evaluate(
        queries, list(demos.values()), cfg, c["backend"], run,
        workers=c["parallel"], python_runner=c["runner"], results_file=args.out,
    )
    print(
        f"accuracy: {float(report.accuracy) * 100:.1f}%  ties: {float(report.tie_rate) * 100:.1f}%  "
        f"valid attempts: {float(report.valid_rate) * 100:.1f}%"
    )
    return EXIT_OK


def cmd_stats(args) -> int:
    run = RunDir(args.run)
    written = write_stats(run, args.out)
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_knn_rank(args) -> int:
    run = RunDir(args.run)
    pool_file = f"{args.pool}.jsonl" if not args.pool.endswith(".jsonl") else args.pool
    _, demos = run.load_pool(pool_file)
    queries = load_samples(args.corpus)
    backend = MockEmbeddingBackend()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("query_id,rank,shot_id,score\n")
        for query in queries:
            for rank, (sid, score) in enumerate(rank_pool(query, list(demos.values()), backend)):
                fh.write(f"{query.id},{rank},{sid},{score:.6f}\n")
    print(f"wrote {out}")
    return EXIT_OK


def make_parser() -> _Parser:
    parser = _Parser(prog="demo-forge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"demo-forge {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-corpus", help="check a sample JSONL file")
    p.add_argument("corpus")
    p.set_defaults(fn=cmd_validate_corpus)

    p = sub.add_parser("harvest", help="part I: mine verified demonstrations")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed-pool", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--subset", type=int, default=None)
    p.add_argument("--attempts", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--context-shots", type=int, default=None)
    p.add_argument("--format", choices=["full", "compact"], default=None)
    p.add_argument("--budget", type=int, default=None)
    _add_backend_flags(p)
    p.set_defaults(fn=cmd_harvest)

    p = sub.add_parser("refine", help="part II: difficulty + one-shot utility filters")
    p.add_argument("--run", required=True)
    p.add_argument("--threshold", default=None)
    p.add_argument("--strict-threshold", action="store_true", default=None)
    p.add_argument("--min-uses", type=int, default=None)
    p.add_argument("--min-rate", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=["full", "compact"], default=None)
    _add_backend_flags(p)
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("infer", help="part III: multi-context majority-vote inference")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True, help="queries JSONL")
    p.add_argument("--pool", default="pool_c_merged")
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--attempts", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--format", choices=["full", "compact"], default=None)
    p.add_argument("--type-filter", choices=["none", "q_type", "qa_type"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="results.jsonl")
    _add_backend_flags(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("stats", help="emit analysis CSVs for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("knn-rank", help="similarity-rank a pool against queries")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--pool", default="pool_b")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_knn_rank)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (CorpusError, DemoForgeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
