"""Batch embedding exporter: run an encoder over a manifest, emit store files."""

from .errors import ExportError, ModelError
from .jobs import (
    ExportJob,
    export_gloss_embeddings,
    export_image_embeddings,
    export_text_embeddings,
)

__all__ = [
    "ExportError",
    "ExportJob",
    "ModelError",
    "export_gloss_embeddings",
    "export_image_embeddings",
    "export_text_embeddings",
]
