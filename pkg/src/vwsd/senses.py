"""Sense inventory, gloss matching, and prompt construction.

A sense inventory maps lemmas to their candidate senses (synset id, gloss,
synonyms).  Given an embedded context phrase and embeddings for each
candidate gloss, ``match_gloss`` picks the sense whose gloss is nearest by
cosine similarity.  ``build_prompt`` then renders the natural-language
prompt used for image retrieval and scoring.

All embeddings are supplied by the caller (a precomputed store or an HTTP
provider); nothing in this module runs an encoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Optional, Sequence, Union

from .embedding import cosine_similarity

__all__ = [
    "SenseEntry",
    "SenseInventory",
    "GlossMatch",
    "load_inventory",
    "match_gloss",
    "build_prompt",
    "normalize_lemma",
]


def normalize_lemma(lemma: str) -> str:
    """Canonical form used for inventory lookup: lowercase, spaces -> underscores."""
    return lemma.lower().replace(" ", "_")


@dataclass(frozen=True)
class SenseEntry:
    """One candidate sense of a lemma."""

    synset_id: str
    gloss: str
    synonyms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.synset_id:
            raise ValueError("synset_id must be nonempty")
        if not self.gloss:
            raise ValueError("gloss must be nonempty")


@dataclass(frozen=True)
class GlossMatch:
    """Result of matching a context against a lemma's candidate glosses.

    When ``matched`` is False the lemma had no senses to choose from and
    ``entry``/``similarity`` are both None.
    """

    matched: bool
    entry: Optional[SenseEntry] = None
    similarity: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.matched and (self.entry is not None or self.similarity is not None):
            raise ValueError("unmatched result cannot carry an entry or similarity")
        if self.matched and self.entry is None:
            raise ValueError("matched result requires an entry")


class SenseInventory:
    """Immutable lemma -> senses mapping with normalized lookup.

    Lookup goes through :func:`normalize_lemma`, so ``senses_for("Biro")``
    and ``senses_for("biro")`` hit the same entry list.  Entry order is
    load order.
    """

    def __init__(self, entries: Optional[dict[str, tuple[SenseEntry, ...]]] = None):
        self._by_lemma: dict[str, tuple[SenseEntry, ...]] = dict(entries or {})

    def senses_for(self, lemma: str) -> tuple[SenseEntry, ...]:
        """All senses of ``lemma`` in inventory order; empty tuple if absent."""
        return self._by_lemma.get(normalize_lemma(lemma), ())

    def __contains__(self, lemma: str) -> bool:
        return normalize_lemma(lemma) in self._by_lemma

    def __len__(self) -> int:
        return len(self._by_lemma)

    def lemmas(self) -> Iterator[str]:
        return iter(self._by_lemma)

    def items(self) -> Iterator[tuple[str, tuple[SenseEntry, ...]]]:
        return iter(self._by_lemma.items())


_REQUIRED_FIELDS = ("lemma", "synset_id", "gloss", "synonyms")


def _parse_inventory_line(text: str, lineno: int) -> tuple[str, SenseEntry]:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"inventory line {lineno}: invalid record ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise ValueError(f"inventory line {lineno}: expected an object")
    for name in _REQUIRED_FIELDS:
        if name not in obj:
            raise ValueError(f"inventory line {lineno}: missing field {name!r}")
    lemma, synset_id, gloss, synonyms = (obj[k] for k in _REQUIRED_FIELDS)
    if not isinstance(lemma, str) or not lemma:
        raise ValueError(f"inventory line {lineno}: lemma must be a nonempty string")
    if not isinstance(synset_id, str) or not synset_id:
        raise ValueError(f"inventory line {lineno}: synset_id must be a nonempty string")
    if not isinstance(gloss, str) or not gloss:
        raise ValueError(f"inventory line {lineno}: gloss must be a nonempty string")
    if not isinstance(synonyms, list) or not all(isinstance(s, str) for s in synonyms):
        raise ValueError(f"inventory line {lineno}: synonyms must be an array of strings")
    return lemma, SenseEntry(synset_id=synset_id, gloss=gloss, synonyms=tuple(synonyms))


def load_inventory(source: Union[str, Path, IO[str]]) -> SenseInventory:
    """Load a sense inventory from line-delimited records.

    Each non-blank line is a one-line JSON object with fields ``lemma``,
    ``synset_id``, ``gloss`` and ``synonyms``; lines starting with ``#``
    are comments.  A duplicate (lemma, synset_id) pair is an error.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as f:
            return load_inventory(f)

    by_lemma: dict[str, list[SenseEntry]] = {}
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        lemma, entry = _parse_inventory_line(line, lineno)
        key = normalize_lemma(lemma)
        bucket = by_lemma.setdefault(key, [])
        if any(e.synset_id == entry.synset_id for e in bucket):
            raise ValueError(
                f"inventory line {lineno}: duplicate synset {entry.synset_id!r}"
                f" for lemma {lemma!r}"
            )
        bucket.append(entry)
    return SenseInventory({k: tuple(v) for k, v in by_lemma.items()})


def match_gloss(context_emb, gloss_embs: Sequence, entries: Sequence[SenseEntry]) -> GlossMatch:
    """Pick the sense whose gloss embedding is nearest to the context.

    Nearest means maximal cosine similarity; ties go to the lowest index.
    An empty candidate list yields an unmatched result.  A single candidate
    always wins, whatever the embeddings say.
    """
    if len(gloss_embs) != len(entries):
        raise ValueError(
            f"got {len(gloss_embs)} gloss embeddings for {len(entries)} entries"
        )
    if not entries:
        return GlossMatch(matched=False)

    best_index = 0
    best_sim = -2.0  # below any cosine
    for i, gloss_emb in enumerate(gloss_embs):
        sim = cosine_similarity(context_emb, gloss_emb)
        if sim > best_sim:
            best_index = i
            best_sim = sim
    return GlossMatch(matched=True, entry=entries[best_index], similarity=best_sim)


def build_prompt(context: str, target: str, match: GlossMatch) -> str:
    """Render the retrieval prompt for a (context, target, sense) triple.

    With a matched sense the prompt names the context, lists the sense's
    synonyms (minus the target word itself, compared exactly), and spells
    out what the target refers to.  Without one it falls back to the bare
    "This is a picture of {context}" form.
    """
    if not context:
        raise ValueError("context must be nonempty")
    if not target:
        raise ValueError("target must be nonempty")
    if not match.matched:
        return f"This is a picture of {context}"

    assert match.entry is not None
    synonyms = [s for s in match.entry.synonyms if s != target]
    gloss = match.entry.gloss
    if synonyms:
        known_as = ", ".join(synonyms)
        return (
            f"This is a picture of {context}, also known as {known_as},"
            f" where {target} refers to {gloss}."
        )
    return f"This is a picture of {context}, where {target} refers to {gloss}."
