"""Sense-inventory extraction from a locally installed WordNet.

Writes the engine's inventory format: one JSON object per line with
``lemma``, ``synset_id``, ``gloss``, and ``synonyms``. Requires the
``nltk`` package with its wordnet corpus downloaded; both are optional and
checked at call time.
"""

import json
from pathlib import Path
from typing import Union

from .errors import ExportError

POS_TAGS = ("n", "v", "a", "r")


def extract_inventory(out: Union[str, Path], pos: str = "n") -> int:
    """Write one inventory line per (lemma, synset); returns the line count."""
    if pos not in POS_TAGS:
        raise ExportError(f"part of speech must be one of {', '.join(POS_TAGS)}")
    try:
        from nltk.corpus import wordnet
    except ModuleNotFoundError as exc:
        raise ExportError(
            "inventory extraction needs the nltk package with its wordnet"
            " corpus installed"
        ) from exc
    try:
        wordnet.ensure_loaded()
    except LookupError as exc:
        raise ExportError(
            "nltk is installed but its wordnet corpus is not; download it"
            " with nltk.download('wordnet')"
        ) from exc

    lines = []
    for lemma in sorted(set(wordnet.all_lemma_names(pos))):
        for synset in wordnet.synsets(lemma, pos=pos):
            record = {
                "lemma": lemma,
                "synset_id": synset.name(),
                "gloss": synset.definition(),
                "synonyms": [name for name in synset.lemma_names()],
            }
            lines.append(json.dumps(record, sort_keys=True))
    if not lines:
        raise ExportError(f"wordnet has no lemmas for part of speech {pos!r}")

    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines)
