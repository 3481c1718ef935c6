"""Exact top-k retrieval over an image-embedding corpus.

The index is a flat matrix of unit-normalized vectors scanned in fixed-size
partitions; per-partition candidates are merged and sorted by
``(-score, insertion index)``, so results are exact and deterministic,
including tie handling.  Batch retrieval can persist its results to a disk
cache (an embedding-store file of the retrieved vectors plus a line-delimited
manifest) so repeated runs over the same corpus skip the scan.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .embedding import (
    ZERO_NORM_EPS,
    EmbeddingStore,
    as_vector,
    l2_normalize,
    store_digest,
    write_store,
)

__all__ = [
    "DEFAULT_K",
    "ImageIndex",
    "RetrievalResult",
    "build_index",
    "top_k",
    "retrieve_for_samples",
]

DEFAULT_K = 3

# Rows scanned per partition; small enough to keep the candidate merge cheap,
# large enough that the scan is a handful of matmuls.
_PARTITION_ROWS = 4096


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked retrieval hits: ``(image id, cosine score)`` pairs, best first."""

    hits: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        scores = [s for _, s in self.hits]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("hit scores must be non-increasing")
        ids = [i for i, _ in self.hits]
        if len(set(ids)) != len(ids):
            raise ValueError("hit ids must be distinct")

    def ids(self) -> tuple[str, ...]:
        return tuple(i for i, _ in self.hits)

    def scores(self) -> tuple[float, ...]:
        return tuple(s for _, s in self.hits)

    def __len__(self) -> int:
        return len(self.hits)


class ImageIndex:
    """Immutable corpus index; all vectors unit-norm, insertion order kept."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray, corpus_digest: str):
        self._ids = list(ids)
        self._matrix = matrix
        self._digest = corpus_digest

    @property
    def dim(self) -> int:
        return int(self._matrix.shape[1])

    @property
    def corpus_digest(self) -> str:
        """Content hash of the source store (cache key component)."""
        return self._digest

    def __len__(self) -> int:
        return len(self._ids)

    def ids(self) -> list[str]:
        return list(self._ids)

    def vector(self, image_id: str) -> np.ndarray:
        return self._matrix[self._ids.index(image_id)].copy()


def build_index(store: EmbeddingStore) -> ImageIndex:
    """Index every entry of ``store``, normalizing vectors to unit length."""
    if len(store) == 0:
        raise ValueError("cannot index an empty corpus")
    ids: list[str] = []
    rows: list[np.ndarray] = []
    for image_id, vec in store.items():
        if float(np.linalg.norm(np.asarray(vec, dtype=np.float64))) <= ZERO_NORM_EPS:
            raise ValueError(f"zero-norm corpus vector for image {image_id!r}")
        ids.append(image_id)
        rows.append(l2_normalize(vec))
    matrix = np.stack(rows).astype(np.float32)
    return ImageIndex(ids, matrix, store_digest(store))


def top_k(index: ImageIndex, query, k: int = DEFAULT_K) -> RetrievalResult:
    """The ``k`` highest-cosine images for ``query``, ties by insertion order.

    Exact: every partition keeps all rows tied at its k-th score threshold,
    so the merged result equals a full-scan sort.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = as_vector(query, dim=index.dim)
    q64 = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q64)
    if norm <= ZERO_NORM_EPS:
        raise ValueError("zero-norm query")
    q64 /= norm

    matrix = index._matrix
    n = matrix.shape[0]
    candidates: list[tuple[float, int]] = []
    for start in range(0, n, _PARTITION_ROWS):
        block = matrix[start : start + _PARTITION_ROWS]
        scores = block.astype(np.float64) @ q64
        if scores.shape[0] > k:
            threshold = np.partition(scores, scores.shape[0] - k)[scores.shape[0] - k]
            keep = np.nonzero(scores >= threshold)[0]
        else:
            keep = np.arange(scores.shape[0])
        candidates.extend((float(scores[i]), start + int(i)) for i in keep)

    candidates.sort(key=lambda item: (-item[0], item[1]))
    hits = tuple(
        (index._ids[idx], float(np.clip(score, -1.0, 1.0)))
        for score, idx in candidates[:k]
    )
    return RetrievalResult(hits=hits)


def _manifest_path(cache_path: Union[str, Path]) -> Path:
    return Path(str(cache_path) + ".manifest")


def _load_cache(
    cache_path: Path, corpus_digest: str, k: int, dim: int
) -> dict[str, RetrievalResult]:
    manifest = _manifest_path(cache_path)
    if not cache_path.exists() or not manifest.exists():
        return {}
    try:
        with open(manifest, "r", encoding="utf-8") as f:
            header = json.loads(f.readline())
            if (
                header.get("corpus_hash") != corpus_digest
                or header.get("k") != k
                or header.get("dim") != dim
            ):
                return {}
            cached: dict[str, RetrievalResult] = {}
            for line in f:
                record = json.loads(line)
                hits = tuple(zip(record["images"], map(float, record["scores"])))
                cached[record["prompt"]] = RetrievalResult(hits=hits)
            return cached
    except (OSError, ValueError, KeyError):
        return {}  # unreadable cache is treated as absent


def _write_cache(
    cache_path: Path,
    corpus_digest: str,
    k: int,
    index: ImageIndex,
    results: dict[str, RetrievalResult],
) -> None:
    id_to_row = {image_id: row for row, image_id in enumerate(index._ids)}
    retrieved = EmbeddingStore(index.dim)
    for result in results.values():
        for image_id, _ in result.hits:
            if image_id not in retrieved:
                retrieved.add(image_id, index._matrix[id_to_row[image_id]])

    tmp_store = cache_path.with_name(cache_path.name + ".tmp")
    with open(tmp_store, "wb") as f:
        write_store(retrieved, f)
    os.replace(tmp_store, cache_path)

    manifest = _manifest_path(cache_path)
    tmp_manifest = manifest.with_name(manifest.name + ".tmp")
    with open(tmp_manifest, "w", encoding="utf-8") as f:
        f.write(json.dumps({"corpus_hash": corpus_digest, "k": k, "dim": index.dim}) + "\n")
        for prompt_id in sorted(results):
            record = {
                "prompt": prompt_id,
                "images": list(results[prompt_id].ids()),
                "scores": list(results[prompt_id].scores()),
            }
            f.write(json.dumps(record) + "\n")
    os.replace(tmp_manifest, manifest)


def retrieve_for_samples(
    index: ImageIndex,
    prompts_store: EmbeddingStore,
    sample_ids: Optional[Sequence[str]] = None,
    k: int = DEFAULT_K,
    cache_path: Union[str, Path, None] = None,
) -> dict[str, RetrievalResult]:
    """Top-k retrieval for each sample's prompt embedding.

    ``sample_ids`` defaults to every id in ``prompts_store``; ids without a
    stored prompt embedding are an error.  With ``cache_path`` set, results
    are read from / appended to a disk cache keyed by (corpus hash, prompt
    id, k); cache files with a different corpus or k are ignored.
    """
    if sample_ids is None:
        sample_ids = prompts_store.ids()
    missing = [sid for sid in sample_ids if sid not in prompts_store]
    if missing:
        raise ValueError(f"missing prompt embeddings for: {', '.join(missing)}")

    cached: dict[str, RetrievalResult] = {}
    if cache_path is not None:
        cached = _load_cache(Path(cache_path), index.corpus_digest, k, index.dim)

    results: dict[str, RetrievalResult] = {}
    fresh = False
    for sid in sample_ids:
        if sid in cached:
            results[sid] = cached[sid]
        else:
            results[sid] = top_k(index, prompts_store[sid], k)
            fresh = True

    if cache_path is not None and fresh:
        merged = dict(cached)
        merged.update(results)
        _write_cache(Path(cache_path), index.corpus_digest, k, index, merged)
    return results
