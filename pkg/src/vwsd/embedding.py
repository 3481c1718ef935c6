"""Vector math, similarity kernels, and the embedding-store file format.

Embeddings are fixed-dimension float32 vectors keyed by string ids. All
similarity math accumulates in float64; storage stays float32 so stores
round-trip bit-identically through the binary format.
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

FORMAT_MAGIC = b"VWSE"
FORMAT_VERSION = 1
DEFAULT_DIM = 512
DEFAULT_SCALE = 100.0

# L2 norms at or below this are treated as degenerate (zero) vectors.
ZERO_NORM_EPS = 1e-12

_HEADER = struct.Struct("<4sHIQ")  # magic, version, dim, count
_ID_LEN = struct.Struct("<H")


class StoreError(Exception):
    """Base class for embedding-store file format errors."""


class BadMagicError(StoreError):
    """File does not start with the store magic bytes."""


class UnsupportedVersionError(StoreError):
    """File declares a format version this reader does not understand."""


class TruncatedStoreError(StoreError):
    """File ended before the declared records were read."""


class DuplicateIdError(StoreError):
    """Two records in one store carry the same id."""


def as_vector(values, dim: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a 1-D float32 array, checking ``dim`` if given."""
    v = np.asarray(values, dtype=np.float32)
    if v.ndim != 1:
        raise ValueError(f"embedding must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dim {dim}, got {v.shape[0]}")
    return v


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def cosine_similarity(a, b) -> float:
    """Cosine similarity of two vectors, accumulated in float64.

    Raises ValueError on dimension mismatch or a zero-norm input (a
    degenerate embedding carries no direction to compare).
    """
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    _check_dims(av, bv)
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na <= ZERO_NORM_EPS or nb <= ZERO_NORM_EPS:
        raise ValueError("cosine similarity of zero-norm vector is undefined")
    return float(np.clip(np.dot(av, bv) / (na * nb), -1.0, 1.0))


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm (float32 out, float64 accumulation)."""
    v64 = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v64)
    if norm <= ZERO_NORM_EPS:
        raise ValueError("cannot normalize zero-norm vector")
    return (v64 / norm).astype(np.float32)


def softmax(scores, scale: float = 1.0) -> np.ndarray:
    """Stable softmax of ``scale * scores``; returns a float64 distribution.

    ``scale`` is the inverse temperature applied to the raw scores before
    exponentiation (higher = sharper).
    """
    z = np.asarray(scores, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("softmax requires a nonempty 1-D score sequence")
    if not scale > 0:
        raise ValueError(f"softmax scale must be positive, got {scale}")
    z = z * scale
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


class EmbeddingStore:
    """An ordered map of id -> float32 vector, all sharing one dimension."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"store dim must be positive, got {dim}")
        self.dim = int(dim)
        self._entries: dict[str, np.ndarray] = {}

    def add(self, entry_id: str, values) -> None:
        if not isinstance(entry_id, str):
            raise TypeError("entry id must be a string")
        if len(entry_id.encode("utf-8")) > 0xFFFF:
            raise ValueError("entry id exceeds 65535 UTF-8 bytes")
        if entry_id in self._entries:
            raise DuplicateIdError(f"duplicate id {entry_id!r}")
        self._entries[entry_id] = as_vector(values, self.dim)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._entries

    def __getitem__(self, entry_id: str) -> np.ndarray:
        return self._entries[entry_id]

    def get(self, entry_id: str) -> np.ndarray | None:
        return self._entries.get(entry_id)

    def ids(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._entries.items())

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def matrix(self) -> np.ndarray:
        """All vectors stacked in insertion order, shape (len, dim)."""
        if not self._entries:
            return np.empty((0, self.dim), dtype=np.float32)
        return np.stack(list(self._entries.values()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        if self.dim != other.dim or self.ids() != other.ids():
            return False
        return all(
            a.tobytes() == other._entries[i].tobytes()
            for i, a in self._entries.items()
        )

    @classmethod
    def from_items(cls, dim: int, items: Iterable[tuple[str, object]]) -> "EmbeddingStore":
        store = cls(dim)
        for entry_id, values in items:
            store.add(entry_id, values)
        return store


def _open_sink(sink) -> tuple[BinaryIO, bool]:
    if isinstance(sink, (str, Path)):
        return open(sink, "wb"), True
    return sink, False


def write_store(store: EmbeddingStore, sink) -> None:
    """Serialize ``store`` to a path or binary file object.

    Format (little-endian): magic "VWSE", version u16, dim u32, count u64,
    then per record [id_len u16][id UTF-8][dim x f32]. No padding.
    """
    f, owned = _open_sink(sink)
    try:
        f.write(_HEADER.pack(FORMAT_MAGIC, FORMAT_VERSION, store.dim, len(store)))
        for entry_id, vec in store.items():
            raw = entry_id.encode("utf-8")
            f.write(_ID_LEN.pack(len(raw)))
            f.write(raw)
            f.write(vec.astype("<f4", copy=False).tobytes())
    finally:
        if owned:
            f.close()


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedStoreError(f"truncated store file while reading {what}")
    return buf


def read_store(source) -> EmbeddingStore:
    """Parse a store from a path or binary file object.

    Rejects bad magic, unknown versions, truncation, duplicate ids, and
    trailing bytes, each with its own error class.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_store(f)
    f = source
    header = _read_exact(f, _HEADER.size, "header")
    magic, version, dim, count = _HEADER.unpack(header)
    if magic != FORMAT_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported store version {version}")
    store = EmbeddingStore(dim)
    vec_bytes = 4 * dim
    for i in range(count):
        (id_len,) = _ID_LEN.unpack(_read_exact(f, _ID_LEN.size, f"record {i} id length"))
        try:
            entry_id = _read_exact(f, id_len, f"record {i} id").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StoreError(f"record {i} id is not valid UTF-8") from exc
        vec = np.frombuffer(_read_exact(f, vec_bytes, f"record {i} vector"), dtype="<f4")
        if entry_id in store:
            raise DuplicateIdError(f"duplicate id {entry_id!r} at record {i}")
        store.add(entry_id, vec)
    if f.read(1):
        raise StoreError("trailing data after final record")
    return store


def serialize_store(store: EmbeddingStore) -> bytes:
    buf = io.BytesIO()
    write_store(store, buf)
    return buf.getvalue()


def store_digest(store: EmbeddingStore) -> str:
    """Hex SHA-256 over the store's serialized bytes (dim, ids, float bits)."""
    h = hashlib.sha256()
    h.update(_HEADER.pack(FORMAT_MAGIC, FORMAT_VERSION, store.dim, len(store)))
    for entry_id, vec in store.items():
        raw = entry_id.encode("utf-8")
        h.update(_ID_LEN.pack(len(raw)))
        h.update(raw)
        h.update(vec.astype("<f4", copy=False).tobytes())
    return h.hexdigest()
