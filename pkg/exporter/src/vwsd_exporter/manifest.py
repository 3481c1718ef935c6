"""Input manifests: two-column TSV files mapping an id to its payload."""

from pathlib import Path
from typing import Union

from .errors import ExportError

Rows = tuple[tuple[str, str], ...]


def read_manifest(path: Union[str, Path]) -> Rows:
    """Parse an ``id<TAB>value`` manifest; blank lines are skipped.

    The value column is a text to embed (text export) or an image path
    (image export). Ids must be unique and nonempty.
    """
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ExportError(f"manifest {path}: not valid UTF-8 ({exc.reason})") from exc

    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        columns = line.rstrip("\r").split("\t")
        if len(columns) != 2:
            raise ExportError(
                f"manifest line {lineno}: expected 2 tab-separated columns,"
                f" got {len(columns)}"
            )
        entry_id, value = columns
        if not entry_id:
            raise ExportError(f"manifest line {lineno}: empty id")
        if entry_id in seen:
            raise ExportError(f"manifest line {lineno}: duplicate id {entry_id!r}")
        seen.add(entry_id)
        rows.append((entry_id, value))
    if not rows:
        raise ExportError(f"manifest {path} has no rows")
    return tuple(rows)
