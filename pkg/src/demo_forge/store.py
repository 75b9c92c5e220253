"""Append-only JSONL persistence for corpora, pools, ledgers and run configs.

A run directory is self-describing:

    runs/ID/
      config.json            resolved configs, one key per stage
      attempts.jsonl         canonical harvest attempt ledger
      pool_a.jsonl ...       pool meta record followed by demo records
      one_shot_results.jsonl results.jsonl  manifests/  wal/

Stages append attempt records to ``wal/<stage>.jsonl`` as they complete
(atomic at record granularity, so a crash loses at most one truncated
trailing line) and write the canonical, deterministically ordered files
at finalize. Resume reads the WAL, so completed work is never re-issued.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .core import Demonstration, DemoForgeError, Pool, Sample

SCHEMA_VERSION = 1


class CorpusError(DemoForgeError):
    pass


class MissingPool(DemoForgeError):
    pass


class IncompatibleSchemaVersion(DemoForgeError):
    pass


@dataclass
class ScanStats:
    corrupt_records: int = 0
    truncated_tail: bool = False
    warnings: list[str] = field(default_factory=list)


def _envelope(record_type: str, payload: Mapping[str, Any]) -> dict[str, Any]:
    doc = {"type": record_type, "schema": SCHEMA_VERSION}
    doc.update(payload)
    return doc


def append_record(path: Path, record_type: str, payload: Mapping[str, Any]) -> int:
    """Append one record; returns the byte offset it was written at."""
    path.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(_envelope(record_type, payload), ensure_ascii=False, sort_keys=True)
    # flush (not fsync): records must survive a killed process, not a dead machine
    with open(path, "a", encoding="utf-8") as fh:
        offset = fh.tell()
        fh.write(line + "\n")
        fh.flush()
    return offset


def scan_records(
    path: Path,
    record_type: str | None = None,
    stats: ScanStats | None = None,
) -> Iterator[dict[str, Any]]:
    """Yield records of one type; skip corrupt lines, tolerate a truncated tail."""
    if not path.exists():
        return
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    trailing_newline = lines and lines[-1] == ""
    if trailing_newline:
        lines = lines[:-1]
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        last = i == len(lines) - 1
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            if last and not trailing_newline:
                if stats is not None:
                    stats.truncated_tail = True
                    stats.warnings.append(f"{path.name}: ignored truncated trailing line")
            else:
                if stats is not None:
                    stats.corrupt_records += 1
                    stats.warnings.append(f"{path.name}: skipped corrupt record at line {i + 1}")
            continue
        if not isinstance(doc, dict) or "type" not in doc:
            if stats is not None:
                stats.corrupt_records += 1
                stats.warnings.append(f"{path.name}: skipped untyped record at line {i + 1}")
            continue
        if int(doc.get("schema", 0)) > SCHEMA_VERSION:
            raise IncompatibleSchemaVersion(
                f"{path.name} line {i + 1} has schema {doc.get('schema')}, "
                f"this build supports <= {SCHEMA_VERSION}"
            )
        if record_type is None or doc["type"] == record_type:
            yield doc


def write_canonical(path: Path, records: Iterable[tuple[str, Mapping[str, Any]]]) -> None:
    """Write a full JSONL file deterministically via tmp-file + atomic rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for record_type, payload in records:
                fh.write(
                    json.dumps(_envelope(record_type, payload), ensure_ascii=False, sort_keys=True)
                    + "\n"
                )
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


# ---------------------------------------------------------------------------
# Corpus files


def load_samples(path: Path | str, limit: int | None = None) -> list[Sample]:
    """Load a sample corpus (one JSON object per line, UTF-8, no BOM)."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    samples: list[Sample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if lineno == 1 and line.startswith("﻿"):
                raise CorpusError(f"{path}: line 1: corpus must be UTF-8 without BOM")
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                sample = Sample.from_json(doc)
            except (KeyError, ValueError, TypeError) as exc:
                raise CorpusError(f"{path}: line {lineno}: {exc}") from exc
            if sample.id in seen:
                raise CorpusError(f"{path}: line {lineno}: duplicate sample id {sample.id!r}")
            seen.add(sample.id)
            samples.append(sample)
            if limit is not None and len(samples) >= limit:
                break
    return samples


def write_samples(path: Path | str, samples: Iterable[Sample]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Run directories


class RunDir:
    """Paths and typed read/write helpers for one pipeline run."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def init(self) -> "RunDir":
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "manifests").mkdir(exist_ok=True)
        (self.root / "wal").mkdir(exist_ok=True)
        return self

    def path(self, name: str) -> Path:
        return self.root / name

    def wal_path(self, stage: str) -> Path:
        return self.root / "wal" / f"{stage}.jsonl"

    # -- config

    def read_config(self) -> dict[str, Any]:
        p = self.path("config.json")
        if not p.exists():
            return {}
        return json.loads(p.read_text(encoding="utf-8"))

    def record_config(self, stage: str, resolved: Mapping[str, Any]) -> None:
        config = self.read_config()
        config[stage] = dict(resolved)
        p = self.path("config.json")
        p.write_text(
            json.dumps(config, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    # -- checkpoints

    def checkpoint(self, stage: str, manifest: Mapping[str, Any]) -> None:
        p = self.root / "manifests" / f"{stage}.json"
        body = json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n"
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=p.name)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(body)
        os.replace(tmp, p)

    def read_checkpoint(self, stage: str) -> dict[str, Any] | None:
        p = self.root / "manifests" / f"{stage}.json"
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    # -- pools

    def save_pool(self, filename: str, pool: Pool, demos: Iterable[Demonstration]) -> None:
        records: list[tuple[str, Mapping[str, Any]]] = [("pool", pool.to_json())]
        for demo in sorted(demos, key=lambda d: d.id):
            records.append(("demo", demo.to_json()))
        write_canonical(self.path(filename), records)

    def load_pool(self, filename: str) -> tuple[Pool, dict[str, Demonstration]]:
        path = self.path(filename)
        if not path.exists():
            raise MissingPool(f"pool file not found: {path}")
        pool: Pool | None = None
        demos: dict[str, Demonstration] = {}
        stats = ScanStats()
        for doc in scan_records(path, None, stats):
            if doc["type"] == "pool":
                pool = Pool.from_json(doc)
            elif doc["type"] == "demo":
                demo = Demonstration.from_json(doc)
                demos[demo.id] = demo
        if pool is None:
            raise MissingPool(f"{path} has no pool meta record")
        missing = pool.member_ids - set(demos)
        if missing:
            raise MissingPool(f"{path} lacks demo records for {sorted(missing)[:5]}")
        return pool, demos
