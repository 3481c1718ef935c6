"""Dataset ingestion: tab-separated sample rows plus an aligned gold file.

Each data row is ``target<TAB>context<TAB>img1..img10``.  The gold file has
one image id per line, aligned with the raw data rows.  Rows whose bytes do
not decode as UTF-8 are skipped and counted rather than failing the load;
their gold lines are skipped with them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

__all__ = [
    "N_CANDIDATES",
    "N_COLUMNS",
    "Sample",
    "DatasetLoad",
    "load_dataset",
]

N_CANDIDATES = 10
N_COLUMNS = 2 + N_CANDIDATES


@dataclass(frozen=True)
class Sample:
    """One task instance: pick the candidate image matching the sense in use."""

    id: str
    target_word: str
    context: str
    candidate_image_ids: tuple[str, ...]
    gold_image_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("sample id must be nonempty")
        if not self.target_word:
            raise ValueError(f"sample {self.id}: target word must be nonempty")
        if len(self.candidate_image_ids) != N_CANDIDATES:
            raise ValueError(
                f"sample {self.id}: expected {N_CANDIDATES} candidate images,"
                f" got {len(self.candidate_image_ids)}"
            )
        if len(set(self.candidate_image_ids)) != N_CANDIDATES:
            raise ValueError(f"sample {self.id}: candidate image ids must be distinct")
        if self.target_word not in self.context.split():
            raise ValueError(
                f"sample {self.id}: context {self.context!r} does not contain"
                f" target word {self.target_word!r}"
            )
        if self.gold_image_id is not None and self.gold_image_id not in self.candidate_image_ids:
            raise ValueError(
                f"sample {self.id}: gold image {self.gold_image_id!r} is not a candidate"
            )

    @property
    def gold_index(self) -> Optional[int]:
        if self.gold_image_id is None:
            return None
        return self.candidate_image_ids.index(self.gold_image_id)


@dataclass(frozen=True)
class DatasetLoad:
    """Parsed samples plus bookkeeping for skipped rows.

    ``len(samples) + len(skipped_rows)`` always equals the number of raw
    data rows.
    """

    samples: tuple[Sample, ...]
    skipped_rows: tuple[int, ...] = field(default=())

    @property
    def n_rows(self) -> int:
        return len(self.samples) + len(self.skipped_rows)


def _sample_id(row: int) -> str:
    return f"s{row:05d}"


def load_dataset(
    data_path: Union[str, Path], gold_path: Union[str, Path, None] = None
) -> DatasetLoad:
    """Parse the tab-separated dataset, optionally joining gold labels.

    Raises on a decodable row with the wrong column count (message carries
    the 1-based row number), on a gold id that is not among the row's
    candidates, and on a gold file whose line count disagrees with the
    data file.
    """
    raw_rows = Path(data_path).read_bytes().splitlines()

    gold_lines: Optional[list[str]] = None
    if gold_path is not None:
        gold_lines = Path(gold_path).read_text(encoding="utf-8").splitlines()
        if len(gold_lines) != len(raw_rows):
            raise ValueError(
                f"gold file has {len(gold_lines)} lines for {len(raw_rows)} data rows"
            )

    samples: list[Sample] = []
    skipped: list[int] = []
    for row_no, raw in enumerate(raw_rows, start=1):
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError:
            skipped.append(row_no)
            continue
        columns = line.rstrip("\r").split("\t")
        if len(columns) != N_COLUMNS:
            raise ValueError(
                f"data row {row_no}: expected {N_COLUMNS} columns, got {len(columns)}"
            )
        target, context = columns[0], columns[1]
        candidates = tuple(columns[2:])
        gold = None
        if gold_lines is not None:
            gold = gold_lines[row_no - 1].strip()
            if gold not in candidates:
                raise ValueError(
                    f"data row {row_no}: gold image {gold!r} is not among the candidates"
                )
        try:
            sample = Sample(
                id=_sample_id(row_no),
                target_word=target,
                context=context,
                candidate_image_ids=candidates,
                gold_image_id=gold,
            )
        except ValueError as exc:
            raise ValueError(f"data row {row_no}: {exc}") from exc
        samples.append(sample)
    return DatasetLoad(samples=tuple(samples), skipped_rows=tuple(skipped))
