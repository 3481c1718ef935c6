"""Modality fusers: combine a context embedding with retrieved-image
embeddings and score candidate images.

Three fusers share one scoring convention (cosine against L2-normalized
candidates, softmax at a configurable scale):

* average — softmax each source's candidate cosines, average the four
  distributions; no trainable parameters.
* mlp — concatenate the four sources into a 4·D vector, apply a one-hidden-
  layer rectified MLP down to D, normalize, score.
* transformer — treat the four sources as an (unordered) length-4 sequence,
  run post-norm encoder layers without positional encodings, sum-pool,
  normalize, score.  Because nothing in the stack sees positions and all
  sequence-axis reductions are order-canonical, the output is bitwise
  invariant under permutations of the four inputs.

MLP and transformer forwards are recorded on the autodiff tape; training
and inference share the same implementation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .embedding import (
    DEFAULT_DIM,
    DEFAULT_SCALE,
    ZERO_NORM_EPS,
    EmbeddingStore,
    read_store,
    softmax,
    write_store,
)

__all__ = [
    "RETRIEVED_ARITY",
    "FusionInput",
    "FusedScore",
    "MlpParams",
    "TransformerParams",
    "pad_retrieved",
    "average_fuse",
    "mlp_fuse",
    "transformer_fuse",
    "mlp_forward",
    "transformer_forward",
    "wrap_tensors",
    "rank_candidates",
    "save_checkpoint",
    "load_checkpoint",
]

RETRIEVED_ARITY = 3


def _as_float_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class FusionInput:
    """One sample's fusion inputs: context, 3 retrieved images, C candidates."""

    context_emb: np.ndarray
    retrieved_embs: tuple[np.ndarray, ...]
    candidate_embs: tuple[np.ndarray, ...]
    gold_index: Optional[int] = None

    def __post_init__(self) -> None:
        context = _as_float_vector(self.context_emb, "context embedding")
        object.__setattr__(self, "context_emb", context)
        retrieved = tuple(
            _as_float_vector(v, f"retrieved embedding {i}")
            for i, v in enumerate(self.retrieved_embs)
        )
        object.__setattr__(self, "retrieved_embs", retrieved)
        candidates = tuple(
            _as_float_vector(v, f"candidate embedding {i}")
            for i, v in enumerate(self.candidate_embs)
        )
        object.__setattr__(self, "candidate_embs", candidates)

        if len(retrieved) != RETRIEVED_ARITY:
            raise ValueError(
                f"expected exactly {RETRIEVED_ARITY} retrieved embeddings,"
                f" got {len(retrieved)}"
            )
        if not candidates:
            raise ValueError("candidate list must be nonempty")
        dim = context.shape[0]
        for name, vec in [
            *((f"retrieved embedding {i}", v) for i, v in enumerate(retrieved)),
            *((f"candidate embedding {i}", v) for i, v in enumerate(candidates)),
        ]:
            if vec.shape[0] != dim:
                raise ValueError(f"{name} has dim {vec.shape[0]}, expected {dim}")
        if self.gold_index is not None and not 0 <= self.gold_index < len(candidates):
            raise ValueError(
                f"gold index {self.gold_index} out of range for {len(candidates)} candidates"
            )

    @property
    def dim(self) -> int:
        return int(self.context_emb.shape[0])

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_embs)

    def sources(self) -> list[np.ndarray]:
        """The four fused sources: context first, then retrieved."""
        return [self.context_emb, *self.retrieved_embs]


def pad_retrieved(context_emb, retrieved: Sequence) -> tuple[np.ndarray, ...]:
    """Bring a retrieved-embedding list to exactly 3 entries.

    Short lists repeat their last entry; an empty list falls back to the
    context embedding in all three slots; longer lists keep the top 3.
    """
    vecs = [np.asarray(v) for v in retrieved]
    if not vecs:
        context = np.asarray(context_emb)
        return (context, context.copy(), context.copy())
    while len(vecs) < RETRIEVED_ARITY:
        vecs.append(vecs[-1].copy())
    return tuple(vecs[:RETRIEVED_ARITY])


@dataclass(frozen=True)
class FusedScore:
    """Candidate probabilities plus, for trainable fusers, the fused vector."""

    probabilities: np.ndarray
    fused: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "probabilities", p)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities must be a nonempty 1-D vector")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(p.sum()) - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")


def rank_candidates(score: FusedScore) -> list[int]:
    """Candidate indices by descending probability; ties by ascending index."""
    p = score.probabilities
    return sorted(range(p.shape[0]), key=lambda i: (-p[i], i))


def _unit_rows(vectors: Sequence[np.ndarray], what: str) -> np.ndarray:
    """Stack unit-normalized copies of ``vectors``, preserving their dtype."""
    rows = []
    for i, vec in enumerate(vectors):
        v = np.asarray(vec)
        norm = float(np.linalg.norm(v.astype(np.float64)))
        if norm <= ZERO_NORM_EPS:
            raise ValueError(f"{what} {i}: cannot normalize zero-norm vector")
        rows.append((v / v.dtype.type(norm)).astype(v.dtype))
    return np.stack(rows)


def average_fuse(sample: FusionInput, scale: float = DEFAULT_SCALE) -> FusedScore:
    """Average the per-source candidate distributions; no parameters."""
    cand = _unit_rows(sample.candidate_embs, "candidate").astype(np.float64)
    sources = _unit_rows(sample.sources(), "source").astype(np.float64)
    probs = [softmax(cand @ src, scale) for src in sources]
    # Pairwise grouping keeps the average of identical distributions exact.
    avg = ((probs[0] + probs[1]) + (probs[2] + probs[3])) * 0.25
    return FusedScore(probabilities=avg)


@dataclass
class MlpParams:
    """Weights of the 4·D -> H -> D fuser."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        self.validate()

    @property
    def dim(self) -> int:
        return int(self.w2.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[1])

    def validate(self) -> None:
        if self.w1.ndim != 2 or self.w1.shape[0] % 4 != 0:
            raise ValueError(f"w1 must be (4*D, H), got {self.w1.shape}")
        dim = self.w1.shape[0] // 4
        hidden = self.w1.shape[1]
        expected = {
            "mlp.b1": (self.b1, (hidden,)),
            "mlp.w2": (self.w2, (hidden, dim)),
            "mlp.b2": (self.b2, (dim,)),
        }
        for name, (arr, shape) in expected.items():
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
        for name, arr in self.tensors().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite parameter {name}")

    @classmethod
    def init(
        cls,
        dim: int = DEFAULT_DIM,
        hidden: Optional[int] = None,
        seed: int = 0,
        dtype=np.float32,
    ) -> "MlpParams":
        """Seeded uniform init in ±1/sqrt(fan_in) per layer."""
        hidden = 2 * dim if hidden is None else hidden
        rng = np.random.default_rng(seed)

        def draw(fan_in, *shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        return cls(
            w1=draw(4 * dim, 4 * dim, hidden),
            b1=draw(4 * dim, hidden),
            w2=draw(hidden, hidden, dim),
            b2=draw(hidden, dim),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {"mlp.w1": self.w1, "mlp.b1": self.b1, "mlp.w2": self.w2, "mlp.b2": self.b2}

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        attr = name.removeprefix("mlp.")
        if attr not in ("w1", "b1", "w2", "b2"):
            raise KeyError(name)
        setattr(self, attr, value)

    def config_dict(self) -> dict:
        return {"kind": "mlp", "dim": self.dim, "hidden": self.hidden}


_LAYER_TENSOR_NAMES = (
    "attn.wq",
    "attn.wk",
    "attn.wv",
    "attn.wo",
    "ln1.g",
    "ln1.b",
    "ff.w1",
    "ff.b1",
    "ff.w2",
    "ff.b2",
    "ln2.g",
    "ln2.b",
)


@dataclass
class TransformerParams:
    """Per-layer encoder weights: attention, feed-forward, layer norms."""

    heads: int
    layers: list[dict[str, np.ndarray]]

    def __post_init__(self) -> None:
        self.validate()

    @property
    def dim(self) -> int:
        return int(self.layers[0]["attn.wq"].shape[0])

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("transformer needs at least one layer")
        dim = self.layers[0]["attn.wq"].shape[0]
        if dim % self.heads != 0:
            raise ValueError(f"model width {dim} not divisible by {self.heads} heads")
        shapes = {
            "attn.wq": (dim, dim),
            "attn.wk": (dim, dim),
            "attn.wv": (dim, dim),
            "attn.wo": (dim, dim),
            "ln1.g": (dim,),
            "ln1.b": (dim,),
            "ff.w1": (dim, 4 * dim),
            "ff.b1": (4 * dim,),
            "ff.w2": (4 * dim, dim),
            "ff.b2": (dim,),
            "ln2.g": (dim,),
            "ln2.b": (dim,),
        }
        for i, layer in enumerate(self.layers):
            for name, shape in shapes.items():
                if name not in layer:
                    raise ValueError(f"layer {i} missing tensor {name}")
                if layer[name].shape != shape:
                    raise ValueError(
                        f"enc.{i}.{name} must have shape {shape}, got {layer[name].shape}"
                    )
        for name, arr in self.tensors().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite parameter {name}")

    @classmethod
    def init(
        cls,
        dim: int = DEFAULT_DIM,
        n_layers: int = 2,
        heads: int = 8,
        seed: int = 0,
        dtype=np.float32,
    ) -> "TransformerParams":
        """Seeded uniform init; layer-norm gains 1, biases 0."""
        if dim % heads != 0:
            raise ValueError(f"model width {dim} not divisible by {heads} heads")
        rng = np.random.default_rng(seed)

        def draw(fan_in, *shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        layers = []
        for _ in range(n_layers):
            layer = {
                "attn.wq": draw(dim, dim, dim),
                "attn.wk": draw(dim, dim, dim),
                "attn.wv": draw(dim, dim, dim),
                "attn.wo": draw(dim, dim, dim),
                "ln1.g": np.ones(dim, dtype=dtype),
                "ln1.b": np.zeros(dim, dtype=dtype),
                "ff.w1": draw(dim, dim, 4 * dim),
                "ff.b1": draw(dim, 4 * dim),
                "ff.w2": draw(4 * dim, 4 * dim, dim),
                "ff.b2": draw(4 * dim, dim),
                "ln2.g": np.ones(dim, dtype=dtype),
                "ln2.b": np.zeros(dim, dtype=dtype),
            }
            layers.append(layer)
        return cls(heads=heads, layers=layers)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name in _LAYER_TENSOR_NAMES:
                out[f"enc.{i}.{name}"] = layer[name]
        return out

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        prefix, _, rest = name.partition(".")
        idx_str, _, tensor_name = rest.partition(".")
        if prefix != "enc" or tensor_name not in _LAYER_TENSOR_NAMES:
            raise KeyError(name)
        self.layers[int(idx_str)][tensor_name] = value

    def config_dict(self) -> dict:
        return {
            "kind": "transformer",
            "dim": self.dim,
            "layers": self.n_layers,
            "heads": self.heads,
        }


def _score_fused(
    fused: ad.Tensor, sample: FusionInput, scale: float
) -> tuple[ad.Tensor, ad.Tensor]:
    """Normalize the fused vector, cosine against candidates, scale to logits."""
    cand = _unit_rows(sample.candidate_embs, "candidate").astype(fused.data.dtype)
    fused_unit = ad.unit(fused)
    cosines = ad.matmul(ad.Tensor(cand), fused_unit)
    return ad.scale_by(cosines, scale), fused_unit


def wrap_tensors(params: Union["MlpParams", "TransformerParams"]) -> dict[str, ad.Tensor]:
    """Wrap parameter arrays as tape tensors (shared across a batch)."""
    return {name: ad.Tensor(arr) for name, arr in params.tensors().items()}


def mlp_forward(
    sample: FusionInput, tensors: dict[str, ad.Tensor], scale: float = DEFAULT_SCALE
) -> tuple[ad.Tensor, ad.Tensor]:
    """Tape forward of the MLP fuser; returns (logits, fused unit vector)."""
    stacked = ad.concat([ad.Tensor(v) for v in sample.sources()])
    hidden = ad.relu(ad.add(ad.matmul(stacked, tensors["mlp.w1"]), tensors["mlp.b1"]))
    fused = ad.add(ad.matmul(hidden, tensors["mlp.w2"]), tensors["mlp.b2"])
    return _score_fused(fused, sample, scale)


def transformer_forward(
    sample: FusionInput,
    tensors: dict[str, ad.Tensor],
    heads: int,
    n_layers: int,
    scale: float = DEFAULT_SCALE,
) -> tuple[ad.Tensor, ad.Tensor]:
    """Tape forward of the transformer fuser (post-norm, no positions)."""
    x = ad.stack([ad.Tensor(v) for v in sample.sources()])
    for i in range(n_layers):
        t = lambda name: tensors[f"enc.{i}.{name}"]  # noqa: E731
        attended = ad.attention(
            x, t("attn.wq"), t("attn.wk"), t("attn.wv"), t("attn.wo"), heads
        )
        x = ad.layer_norm(ad.add(x, attended), t("ln1.g"), t("ln1.b"))
        inner = ad.relu(ad.add(ad.matmul(x, t("ff.w1")), t("ff.b1")))
        ff = ad.add(ad.matmul(inner, t("ff.w2")), t("ff.b2"))
        x = ad.layer_norm(ad.add(x, ff), t("ln2.g"), t("ln2.b"))
    fused = ad.seq_sum(x)
    return _score_fused(fused, sample, scale)


def mlp_fuse(
    sample: FusionInput, params: MlpParams, scale: float = DEFAULT_SCALE
) -> FusedScore:
    """Score candidates with the MLP fuser."""
    params.validate()
    logits, fused_unit = mlp_forward(sample, wrap_tensors(params), scale)
    return FusedScore(
        probabilities=softmax(logits.data, 1.0), fused=fused_unit.data.copy()
    )


def transformer_fuse(
    sample: FusionInput, params: TransformerParams, scale: float = DEFAULT_SCALE
) -> FusedScore:
    """Score candidates with the transformer fuser."""
    params.validate()
    logits, fused_unit = transformer_forward(
        sample, wrap_tensors(params), params.heads, params.n_layers, scale
    )
    return FusedScore(
        probabilities=softmax(logits.data, 1.0), fused=fused_unit.data.copy()
    )


# --- checkpoints ---


def save_checkpoint(
    path: Union[str, Path],
    params: Union[MlpParams, TransformerParams],
    scale: float = DEFAULT_SCALE,
) -> None:
    """Write parameters as a config line plus embedding-store payload.

    Tensors are flattened row-major and chunked into dim-sized records with
    ids like ``mlp.w1.00000``; the JSON header records the architecture.
    """
    config = dict(params.config_dict())
    config["scale"] = scale
    dim = params.dim
    store = EmbeddingStore(dim)
    for name, arr in params.tensors().items():
        flat = np.asarray(arr, dtype=np.float32).ravel()
        n_chunks = (flat.size + dim - 1) // dim
        for i in range(n_chunks):
            chunk = flat[i * dim : (i + 1) * dim]
            if chunk.size < dim:
                chunk = np.concatenate([chunk, np.zeros(dim - chunk.size, dtype=np.float32)])
            store.add(f"{name}.{i:05d}", chunk)
    with open(path, "wb") as f:
        f.write(json.dumps(config, sort_keys=True).encode("utf-8") + b"\n")
        write_store(store, f)


def _gather_tensor(
    store: EmbeddingStore, name: str, shape: tuple[int, ...], dim: int
) -> np.ndarray:
    size = int(np.prod(shape))
    n_chunks = (size + dim - 1) // dim
    flat = np.empty(n_chunks * dim, dtype=np.float32)
    for i in range(n_chunks):
        record_id = f"{name}.{i:05d}"
        if record_id not in store:
            raise ValueError(f"checkpoint missing record {record_id}")
        flat[i * dim : (i + 1) * dim] = store[record_id]
    return flat[:size].reshape(shape)


def load_checkpoint(
    path: Union[str, Path]
) -> tuple[Union[MlpParams, TransformerParams], float]:
    """Read a checkpoint back into parameters; returns (params, scale)."""
    with open(path, "rb") as f:
        header = f.readline()
        try:
            config = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"bad checkpoint header: {exc}") from exc
        store = read_store(f)

    kind = config.get("kind")
    dim = int(config["dim"])
    scale = float(config.get("scale", DEFAULT_SCALE))
    if kind == "mlp":
        hidden = int(config["hidden"])
        params = MlpParams(
            w1=_gather_tensor(store, "mlp.w1", (4 * dim, hidden), dim),
            b1=_gather_tensor(store, "mlp.b1", (hidden,), dim),
            w2=_gather_tensor(store, "mlp.w2", (hidden, dim), dim),
            b2=_gather_tensor(store, "mlp.b2", (dim,), dim),
        )
        return params, scale
    if kind == "transformer":
        n_layers = int(config["layers"])
        heads = int(config["heads"])
        shapes = {
            "attn.wq": (dim, dim),
            "attn.wk": (dim, dim),
            "attn.wv": (dim, dim),
            "attn.wo": (dim, dim),
            "ln1.g": (dim,),
            "ln1.b": (dim,),
            "ff.w1": (dim, 4 * dim),
            "ff.b1": (4 * dim,),
            "ff.w2": (4 * dim, dim),
            "ff.b2": (dim,),
            "ln2.g": (dim,),
            "ln2.b": (dim,),
        }
        layers = []
        for i in range(n_layers):
            layers.append(
                {
                    name: _gather_tensor(store, f"enc.{i}.{name}", shape, dim)
                    for name, shape in shapes.items()
                }
            )
        return TransformerParams(heads=heads, layers=layers), scale
    raise ValueError(f"unknown checkpoint kind {kind!r}")
