"""Embedding-store writer.

Implements the engine's binary vector-map format from its documented layout
(little-endian: magic "VWSE", u16 version, u32 dim, u64 count, then
``[u16 id length][UTF-8 id][dim x f32]`` records) without importing the
engine's own serializer, so the engine's reader stays an independent check
on every file this package emits.
"""

import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ExportError

MAGIC = b"VWSE"
VERSION = 1

_HEADER = struct.Struct("<4sHIQ")
_ID_LEN = struct.Struct("<H")

Entry = tuple[str, np.ndarray]


def pack_store(dim: int, entries: Sequence[Entry]) -> bytes:
    """Serialize ``(id, vector)`` pairs, preserving their order."""
    if dim < 1:
        raise ExportError(f"store dim must be positive, got {dim}")
    seen: set[str] = set()
    parts = [_HEADER.pack(MAGIC, VERSION, dim, len(entries))]
    for entry_id, vec in entries:
        raw = entry_id.encode("utf-8")
        if not raw:
            raise ExportError("empty entry id")
        if len(raw) > 0xFFFF:
            raise ExportError(f"entry id {entry_id[:40]!r}... exceeds 65535 bytes")
        if entry_id in seen:
            raise ExportError(f"duplicate entry id {entry_id!r}")
        seen.add(entry_id)
        arr = np.asarray(vec, dtype="<f4")
        if arr.shape != (dim,):
            raise ExportError(
                f"entry {entry_id!r}: vector shape {arr.shape} does not match dim {dim}"
            )
        parts.append(_ID_LEN.pack(len(raw)))
        parts.append(raw)
        parts.append(arr.tobytes())
    return b"".join(parts)


def write_store_file(path: Union[str, Path], dim: int, entries: Iterable[Entry]) -> None:
    """Atomically write a store: serialize to a temp file, then rename."""
    path = Path(path)
    blob = pack_store(dim, list(entries))
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".bin")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
