"""Rank-based evaluation: gold ranks, HIT@1, MRR, and polysemy statistics.

HIT@1 is the fraction of samples whose gold image is ranked first; MRR is
the mean reciprocal gold rank.  Sums use ``math.fsum`` so both metrics are
exactly invariant under reordering of the record list.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence, Union

from .senses import SenseInventory

__all__ = [
    "RankRecord",
    "RankReport",
    "PolysemyStats",
    "rank_of_gold",
    "hit_at_1",
    "mrr",
    "polysemy_stats",
    "write_report",
    "read_report",
]


@dataclass(frozen=True)
class RankRecord:
    """One evaluated sample: its id and the 1-based rank of the gold image."""

    sample_id: str
    gold_rank: int

    def __post_init__(self) -> None:
        if self.gold_rank < 1:
            raise ValueError(f"gold rank must be >= 1, got {self.gold_rank}")


def rank_of_gold(ranking: Sequence[int], gold_index: int) -> int:
    """1-based position of ``gold_index`` in a ranking permutation."""
    if sorted(ranking) != list(range(len(ranking))):
        raise ValueError("ranking is not a permutation of candidate indices")
    try:
        return ranking.index(gold_index) + 1
    except ValueError:
        raise ValueError(f"gold index {gold_index} absent from ranking") from None


def hit_at_1(records: Sequence[RankRecord]) -> float:
    """Fraction of records whose gold rank is exactly 1."""
    if not records:
        raise ValueError("cannot evaluate an empty record set")
    return sum(1 for r in records if r.gold_rank == 1) / len(records)


def mrr(records: Sequence[RankRecord]) -> float:
    """Mean reciprocal gold rank."""
    if not records:
        raise ValueError("cannot evaluate an empty record set")
    return math.fsum(1.0 / r.gold_rank for r in records) / len(records)


@dataclass(frozen=True)
class RankReport:
    """Record list plus the two summary metrics, self-validated on build."""

    records: tuple[RankRecord, ...]
    hit_at_1: float
    mrr: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        expected_hit = hit_at_1(self.records)
        expected_mrr = mrr(self.records)
        if abs(self.hit_at_1 - expected_hit) > 1e-9:
            raise ValueError(
                f"hit_at_1 {self.hit_at_1} does not match records ({expected_hit})"
            )
        if abs(self.mrr - expected_mrr) > 1e-9:
            raise ValueError(f"mrr {self.mrr} does not match records ({expected_mrr})"
            )
        if self.hit_at_1 > self.mrr + 1e-12:
            raise ValueError("hit_at_1 cannot exceed mrr")

    @classmethod
    def from_records(cls, records: Iterable[RankRecord]) -> "RankReport":
        records = tuple(records)
        return cls(records=records, hit_at_1=hit_at_1(records), mrr=mrr(records))

    @property
    def n(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class PolysemyStats:
    """Sample counts bucketed by the target lemma's sense count."""

    one_sense: int
    two_senses: int
    three_plus: int
    not_in_inventory: int

    @property
    def total(self) -> int:
        return self.one_sense + self.two_senses + self.three_plus + self.not_in_inventory

    def percentages(self) -> dict[str, float]:
        """Full-precision percentages; the four buckets sum to 100."""
        if self.total == 0:
            raise ValueError("no samples to bucket")
        return {
            "1": 100.0 * self.one_sense / self.total,
            "2": 100.0 * self.two_senses / self.total,
            "3+": 100.0 * self.three_plus / self.total,
            "missing": 100.0 * self.not_in_inventory / self.total,
        }


def polysemy_stats(samples: Iterable, inventory: SenseInventory) -> PolysemyStats:
    """Bucket samples by how many senses their target word has.

    ``samples`` may be target words or objects with a ``target`` attribute.
    Lemmas absent from the inventory land in a separate bucket rather than
    any of the sense-count buckets.
    """
    counts = [0, 0, 0, 0]  # one, two, three-plus, missing
    for sample in samples:
        target = sample if isinstance(sample, str) else sample.target
        n_senses = len(inventory.senses_for(target))
        if n_senses == 0:
            counts[3] += 1
        elif n_senses == 1:
            counts[0] += 1
        elif n_senses == 2:
            counts[1] += 1
        else:
            counts[2] += 1
    return PolysemyStats(*counts)


def write_report(
    sink: Union[str, Path, IO[str]],
    rows: Sequence[tuple[RankRecord, str]],
) -> RankReport:
    """Write per-sample lines plus a summary record; returns the report.

    Each line is a JSON object ``{"sample", "gold_rank", "top1"}`` in the
    given row order, followed by ``{"n", "hit_at_1", "mrr"}``.
    """
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as f:
            return write_report(f, rows)
    report = RankReport.from_records([record for record, _ in rows])
    for record, top1_id in rows:
        sink.write(
            json.dumps(
                {"sample": record.sample_id, "gold_rank": record.gold_rank, "top1": top1_id},
                sort_keys=True,
            )
            + "\n"
        )
    sink.write(
        json.dumps(
            {"n": report.n, "hit_at_1": report.hit_at_1, "mrr": report.mrr}, sort_keys=True
        )
        + "\n"
    )
    return report


def read_report(
    source: Union[str, Path, IO[str]]
) -> tuple[list[tuple[RankRecord, str]], RankReport]:
    """Parse a report written by :func:`write_report` and re-validate it."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as f:
            return read_report(f)
    rows: list[tuple[RankRecord, str]] = []
    summary: Mapping | None = None
    for line in source:
        obj = json.loads(line)
        if "sample" in obj:
            rows.append((RankRecord(obj["sample"], obj["gold_rank"]), obj["top1"]))
        else:
            summary = obj
    if summary is None:
        raise ValueError("report has no summary record")
    report = RankReport(
        records=tuple(record for record, _ in rows),
        hit_at_1=summary["hit_at_1"],
        mrr=summary["mrr"],
    )
    if report.n != summary["n"]:
        raise ValueError(f"summary n={summary['n']} but report has {report.n} records")
    return rows, report
