"""Export jobs: run an encoder over a manifest and emit a store file.

All emitted vectors are L2-normalized in float64 and stored as float32, in
manifest order (inventory order for gloss exports).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from vwsd.senses import load_inventory

from .backends import load_encoder
from .errors import ExportError
from .manifest import Rows
from .writer import write_store_file

DEFAULT_BATCH = 32
_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class ExportJob:
    """One export request: encoder, inputs, output path, batching."""

    model: str
    manifest: Rows
    out: Path
    batch: int = DEFAULT_BATCH

    def __post_init__(self) -> None:
        object.__setattr__(self, "manifest", tuple(self.manifest))
        object.__setattr__(self, "out", Path(self.out))
        if not self.model:
            raise ExportError("model identifier must be nonempty")
        if not self.manifest:
            raise ExportError("manifest must be nonempty")
        if self.batch < 1:
            raise ExportError(f"batch size must be >= 1, got {self.batch}")
        ids = [entry_id for entry_id, _ in self.manifest]
        if len(set(ids)) != len(ids):
            raise ExportError("manifest ids must be unique")


def _normalized_rows(ids, raw: np.ndarray) -> list[np.ndarray]:
    rows = []
    for entry_id, vec in zip(ids, raw):
        norm = float(np.linalg.norm(vec))
        if norm <= _ZERO_NORM:
            raise ExportError(f"model produced a zero vector for id {entry_id!r}")
        rows.append((vec / norm).astype(np.float32))
    return rows


def export_text_embeddings(job: ExportJob, encoder=None) -> int:
    """Embed each manifest text; returns the number of vectors written."""
    for entry_id, text in job.manifest:
        if not text.strip():
            raise ExportError(f"empty text for id {entry_id!r}")
    encoder = load_encoder(job.model) if encoder is None else encoder

    texts = [text for _, text in job.manifest]
    blocks = [
        encoder.encode_texts(texts[start : start + job.batch])
        for start in range(0, len(texts), job.batch)
    ]
    raw = np.concatenate(blocks)
    ids = [entry_id for entry_id, _ in job.manifest]
    write_store_file(job.out, encoder.dim, zip(ids, _normalized_rows(ids, raw)))
    return len(ids)


def _skip_manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".skipped")


def export_image_embeddings(
    job: ExportJob, skip_bad: bool = False, encoder=None
) -> tuple[int, int]:
    """Embed each manifest image; returns (written, skipped) counts.

    Unreadable images abort the job with an error listing every failed id.
    With ``skip_bad`` they are dropped instead and recorded, one
    ``id<TAB>reason`` line each, in a ``<out>.skipped`` manifest.
    """
    encoder = load_encoder(job.model) if encoder is None else encoder

    loaded: list[tuple[str, Image.Image]] = []
    failed: list[tuple[str, str]] = []
    for entry_id, path in job.manifest:
        try:
            with Image.open(path) as img:
                loaded.append((entry_id, img.convert("RGB")))
        except (OSError, ValueError) as exc:
            failed.append((entry_id, str(exc)))

    if failed and not skip_bad:
        names = ", ".join(entry_id for entry_id, _ in failed)
        raise ExportError(f"unreadable images: {names}")
    if not loaded:
        raise ExportError("no readable images to export")

    images = [img for _, img in loaded]
    blocks = [
        encoder.encode_images(images[start : start + job.batch])
        for start in range(0, len(images), job.batch)
    ]
    raw = np.concatenate(blocks)
    ids = [entry_id for entry_id, _ in loaded]
    write_store_file(job.out, encoder.dim, zip(ids, _normalized_rows(ids, raw)))

    if skip_bad:
        lines = "".join(f"{entry_id}\t{reason}\n" for entry_id, reason in failed)
        _skip_manifest_path(job.out).write_text(lines, encoding="utf-8")
    return len(ids), len(failed)


def export_gloss_embeddings(
    inventory_path: Union[str, Path],
    model: str,
    out: Union[str, Path],
    batch: int = DEFAULT_BATCH,
    encoder=None,
) -> int:
    """Embed every sense gloss in an inventory, keyed by its synset id.

    A synset reachable from several lemmas is embedded once; entry order
    follows the inventory.
    """
    inventory = load_inventory(inventory_path)
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    for _, senses in inventory.items():
        for sense in senses:
            if sense.synset_id in seen:
                continue
            seen.add(sense.synset_id)
            rows.append((sense.synset_id, sense.gloss))
    if not rows:
        raise ExportError(f"inventory {inventory_path} has no senses")

    job = ExportJob(model=model, manifest=tuple(rows), out=Path(out), batch=batch)
    return export_text_embeddings(job, encoder=encoder)
