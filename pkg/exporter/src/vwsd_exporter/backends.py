"""Encoder backends.

Every backend exposes ``dim``, ``encode_texts(texts)`` and
``encode_images(images)`` (PIL images in, one float64 row per input, not
yet normalized). Two kinds exist:

- ``hash:<dim>`` — a deterministic, dependency-free encoder that derives
  each vector from a SHA-256 stream over the input bytes. No semantics;
  useful for plumbing runs and tests.
- anything else — a CLIP-style dual encoder loaded through the
  ``transformers`` hub machinery (a hub id or a local checkpoint path).
"""

import hashlib

import numpy as np

from .errors import ModelError

_CHUNK = hashlib.sha256().digest_size


def _digest_vector(payload: bytes, dim: int) -> np.ndarray:
    """Map bytes to a deterministic point in [-1, 1)^dim."""
    need = dim * 4
    n_chunks = -(-need // _CHUNK)
    stream = b"".join(
        hashlib.sha256(payload + i.to_bytes(4, "little")).digest()
        for i in range(n_chunks)
    )
    words = np.frombuffer(stream[:need], dtype="<u4")
    return words.astype(np.float64) / 2.0**31 - 1.0


class HashEncoder:
    """Deterministic stand-in encoder keyed purely by input bytes."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ModelError(f"hash encoder width must be positive, got {dim}")
        self.dim = int(dim)

    def encode_texts(self, texts) -> np.ndarray:
        return np.stack(
            [_digest_vector(t.encode("utf-8"), self.dim) for t in texts]
        )

    def encode_images(self, images) -> np.ndarray:
        rows = []
        for img in images:
            header = f"{img.mode}:{img.width}x{img.height}:".encode("ascii")
            rows.append(_digest_vector(header + img.tobytes(), self.dim))
        return np.stack(rows)


def _pooled(output):
    # transformers >= 5 returns a ModelOutput whose pooler_output holds the
    # projected features; earlier versions return the tensor directly.
    return output.pooler_output if hasattr(output, "pooler_output") else output


class ClipEncoder:
    """Dual text/image encoder behind a ``transformers`` checkpoint."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ModuleNotFoundError as exc:
            raise ModelError(
                "loading pretrained encoders needs the optional torch and"
                " transformers dependencies"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:  # from_pretrained raises many types
            raise ModelError(f"cannot load model {model_id!r}: {exc}") from exc
        self._model.eval()
        self._torch = torch
        self.dim = int(self._model.config.projection_dim)

    def encode_texts(self, texts) -> np.ndarray:
        with self._torch.no_grad():
            batch = self._processor(
                text=list(texts), return_tensors="pt", padding=True, truncation=True
            )
            feats = _pooled(
                self._model.get_text_features(
                    input_ids=batch["input_ids"],
                    attention_mask=batch["attention_mask"],
                )
            )
        return feats.cpu().numpy().astype(np.float64)

    def encode_images(self, images) -> np.ndarray:
        with self._torch.no_grad():
            batch = self._processor(images=list(images), return_tensors="pt")
            feats = _pooled(
                self._model.get_image_features(pixel_values=batch["pixel_values"])
            )
        return feats.cpu().numpy().astype(np.float64)


def load_encoder(model_id: str):
    """Resolve an opaque model identifier to an encoder instance."""
    if not model_id:
        raise ModelError("model identifier must be nonempty")
    if model_id.startswith("hash:"):
        suffix = model_id[len("hash:"):]
        try:
            dim = int(suffix)
        except ValueError:
            raise ModelError(
                f"bad hash encoder width {suffix!r} in {model_id!r}"
            ) from None
        return HashEncoder(dim)
    return ClipEncoder(model_id)
