"""K-NN shot selection and good-shot ranking-distribution analysis.

Samples embed as unit vectors of the key string
``[(table headers):(one table row):(question)]`` (first row; headers and
cells comma-joined). Rankings are by cosine similarity, which for unit
vectors is a plain dot product.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .core import Demonstration, DemoForgeError, Sample, Verdict
from .refine import OneShotResult


class EmbeddingError(DemoForgeError):
    pass


class MismatchedPools(DemoForgeError):
    pass


def sample_key(sample: Sample) -> str:
    """Embedding input string for a sample (first table row, comma-joined)."""
    headers = ",".join(sample.table.headers) if sample.table else ""
    row = ",".join(sample.table.rows[0]) if sample.table and sample.table.rows else ""
    return f"[({headers}):({row}):({sample.question})]"


class EmbeddingBackend(Protocol):
    backend_id: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


_TOKEN_RE = re.compile(r"[a-z0-9]+")


class MockEmbeddingBackend:
    """Feature-hashed unigram counts, L2-normalized. Deterministic and cheap."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.backend_id = f"mock-hash-{dim}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            for token in _TOKEN_RE.findall(text.casefold()):
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                out[i, int.from_bytes(digest[:4], "big") % self.dim] += 1.0
            norm = np.linalg.norm(out[i])
            if norm == 0.0:
                out[i, 0] = 1.0
            else:
                out[i] /= norm
        return out


class HttpEmbeddingBackend:
    """POST {input: [texts]} -> {data: [{embedding: [...]}]}, disk-cached."""

    def __init__(
        self,
        base_url: str,
        *,
        cache_dir: Path | str | None = None,
        timeout: float = 60.0,
        transport=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.backend_id = f"http:{self.base_url}"
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.timeout = timeout
        self._transport = transport or self._post

    @staticmethod
    def _post(url: str, payload: dict, timeout: float):
        import requests

        resp = requests.post(url, json=payload, timeout=timeout)
        if resp.status_code >= 400:
            raise EmbeddingError(f"embedding backend returned {resp.status_code}: {resp.text}")
        return resp.json()

    def _cache_path(self, text: str) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.sha256(f"{self.backend_id}|{text}".encode("utf-8")).hexdigest()
        return self.cache_dir / f"{key}.json"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        vectors: list[np.ndarray | None] = [None] * len(texts)
        missing: list[int] = []
        for i, text in enumerate(texts):
            path = self._cache_path(text)
            if path is not None and path.exists():
                vectors[i] = np.asarray(json.loads(path.read_text()), dtype=np.float64)
            else:
                missing.append(i)
        if missing:
            body = self._transport(
                self.base_url, {"input": [texts[i] for i in missing]}, self.timeout
            )
            try:
                embedded = [np.asarray(d["embedding"], dtype=np.float64) for d in body["data"]]
            except (KeyError, TypeError) as exc:
                raise EmbeddingError(f"malformed embedding response: {body}") from exc
            if len(embedded) != len(missing):
                raise EmbeddingError(
                    f"asked for {len(missing)} embeddings, got {len(embedded)}"
                )
            for i, vec in zip(missing, embedded):
                norm = np.linalg.norm(vec)
                if norm == 0.0:
                    raise EmbeddingError("embedding backend returned a zero vector")
                vec = vec / norm
                vectors[i] = vec
                path = self._cache_path(texts[i])
                if path is not None:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_text(json.dumps(vec.tolist()))
        return np.vstack([v for v in vectors])


def rank_pool(
    query: Sample,
    pool: Sequence[Demonstration],
    backend: EmbeddingBackend,
) -> list[tuple[str, float]]:
    """Pool ranked by cosine similarity to the query, descending; ties by id."""
    if not pool:
        return []
    ordered = sorted(pool, key=lambda d: d.id)
    texts = [sample_key(query)] + [sample_key(d.sample) for d in ordered]
    vectors = backend.embed(texts)
    scores = vectors[1:] @ vectors[0]
    ranked = sorted(
        zip((d.id for d in ordered), scores.tolist()), key=lambda t: (-t[1], t[0])
    )
    return [(sid, float(score)) for sid, score in ranked]


def knn_shots(
    query: Sample,
    pool: Sequence[Demonstration],
    backend: EmbeddingBackend,
    k: int,
) -> list[str]:
    """Top-k pool ids for a fixed K-NN context (the ablation's alternative)."""
    return [sid for sid, _ in rank_pool(query, pool, backend)[:k]]


# ---------------------------------------------------------------------------
# Good-shot rank distributions


@dataclass
class RankDistribution:
    pool_size: int
    per_query: dict[str, list[int]]  # query id -> 0-based ranks of its good shots
    mean_normalized_rank: float  # 0.5 under a uniform null; < 0.5 means head bias

    def rank_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for ranks in self.per_query.values():
            for r in ranks:
                counts[r] = counts.get(r, 0) + 1
        return dict(sorted(counts.items()))


def good_shot_distribution(
    one_shot_results: Sequence[OneShotResult],
    rankings: Mapping[str, Sequence[str]],
) -> RankDistribution:
    """Where do the shots that solved each query sit in its similarity ranking?

    ``rankings`` maps query id -> full ranked list of shot ids. The head-bias
    statistic is the mean of (rank + 0.5) / pool_size over all good shots,
    exactly 0.5 in expectation when ranks are uniform.
    """
    if not rankings:
        raise MismatchedPools("no rankings supplied")
    sizes = {len(r) for r in rankings.values()}
    if len(sizes) != 1:
        raise MismatchedPools(f"rankings cover pools of different sizes: {sorted(sizes)}")
    pool_size = sizes.pop()
    if pool_size == 0:
        raise MismatchedPools("rankings are empty")

    position: dict[str, dict[str, int]] = {
        qid: {sid: i for i, sid in enumerate(ranked)} for qid, ranked in rankings.items()
    }
    per_query: dict[str, list[int]] = {}
    total = 0.0
    count = 0
    for result in one_shot_results:
        if result.verdict is not Verdict.CORRECT:
            continue
        if result.query_id not in position:
            raise MismatchedPools(f"no ranking for query {result.query_id}")
        pos = position[result.query_id].get(result.shot_id)
        if pos is None:
            raise MismatchedPools(
                f"shot {result.shot_id} missing from ranking of query {result.query_id}"
            )
        per_query.setdefault(result.query_id, []).append(pos)
        total += (pos + 0.5) / pool_size
        count += 1
    mean = total / count if count else 0.5
    return RankDistribution(
        pool_size=pool_size, per_query=per_query, mean_normalized_rank=mean
    )
