"""HTTP client for an external text-embedding service, with a store-file cache.

Protocol: POST ``<endpoint>/embed`` with ``{"texts": [...]}``; the service
answers ``{"dim": D, "embeddings": [[...], ...]}``.  Vectors are cached in a
store file keyed by the sha256 of each text, so repeat runs embed nothing.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence, Union

import requests

from .embedding import EmbeddingStore, read_store, write_store

__all__ = ["MAX_ATTEMPTS", "ProviderError", "text_key", "fetch_embeddings"]

MAX_ATTEMPTS = 3


class ProviderError(Exception):
    """Embedding service unreachable, failing, or returning bad data."""


def text_key(text: str) -> str:
    """Cache/store id for a text: sha256 of its UTF-8 bytes."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _post_embed(endpoint: str, texts: list[str], timeout: float, backoff: float) -> dict:
    url = endpoint.rstrip("/") + "/embed"
    last_error: Exception | None = None
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            response = requests.post(url, json={"texts": texts}, timeout=timeout)
            if response.status_code != 200:
                raise ProviderError(f"provider returned status {response.status_code}")
            return response.json()
        except (requests.RequestException, ProviderError, ValueError) as exc:
            last_error = exc
            if attempt < MAX_ATTEMPTS:
                time.sleep(backoff * 2 ** (attempt - 1))
    raise ProviderError(
        f"provider request failed after {MAX_ATTEMPTS} attempts: {last_error}"
    )


def _atomic_write_store(store: EmbeddingStore, path: Path) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            write_store(store, f)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def fetch_embeddings(
    endpoint: str,
    texts: Sequence[str],
    cache_path: Union[str, Path, None] = None,
    expected_dim: Optional[int] = None,
    timeout: float = 10.0,
    backoff: float = 0.1,
) -> EmbeddingStore:
    """Embed ``texts``, returning a store keyed by content hash.

    Only texts absent from the cache file are sent to the service; the cache
    is rewritten atomically after a fetch.  Transport and status failures
    are retried up to 3 times with exponential backoff, then raised as
    ProviderError.  A vector length disagreeing with the provider-declared
    dim, or a declared dim disagreeing with ``expected_dim``, is an error.
    """
    if not texts:
        raise ValueError("no texts to embed")

    unique: dict[str, str] = {}
    for text in texts:
        unique.setdefault(text_key(text), text)

    cache: Optional[EmbeddingStore] = None
    if cache_path is not None:
        cache_path = Path(cache_path)
        if cache_path.exists():
            cache = read_store(cache_path)
            if expected_dim is not None and cache.dim != expected_dim:
                raise ProviderError(
                    f"dimension mismatch: cache dim {cache.dim}, expected {expected_dim}"
                )

    missing = {
        key: text
        for key, text in unique.items()
        if cache is None or key not in cache
    }

    if missing:
        payload = _post_embed(endpoint, list(missing.values()), timeout, backoff)
        if not isinstance(payload, dict) or "dim" not in payload or "embeddings" not in payload:
            raise ProviderError("malformed provider response")
        dim = payload["dim"]
        vectors = payload["embeddings"]
        if not isinstance(dim, int) or dim < 1:
            raise ProviderError(f"malformed provider dim {dim!r}")
        if len(vectors) != len(missing):
            raise ProviderError(
                f"provider returned {len(vectors)} vectors for {len(missing)} texts"
            )
        if expected_dim is not None and dim != expected_dim:
            raise ProviderError(
                f"dimension mismatch: provider dim {dim}, expected {expected_dim}"
            )
        if cache is not None and cache.dim != dim:
            raise ProviderError(
                f"dimension mismatch: provider dim {dim}, cache dim {cache.dim}"
            )
        for vector in vectors:
            if len(vector) != dim:
                raise ProviderError(
                    f"dimension mismatch: got a vector of length {len(vector)},"
                    f" declared dim {dim}"
                )
        if cache is None:
            cache = EmbeddingStore(dim)
        for key, vector in zip(missing, vectors):
            cache.add(key, vector)
        if cache_path is not None:
            _atomic_write_store(cache, cache_path)

    assert cache is not None  # texts nonempty: either cached or just fetched
    result = EmbeddingStore(cache.dim)
    for key in unique:
        vector = cache.get(key)
        if vector is None:
            raise ProviderError(f"provider cache missing entry {key}")
        result.add(key, vector)
    return result
