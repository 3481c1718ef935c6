"""End-to-end orchestration: dataset → gloss match → prompt → retrieve → fuse → rank.

Two embedding spaces are in play: contexts and glosses live in one (the
disambiguation space), prompts, corpus images, and candidate images in the
other (the scoring space).  Their dimensions may differ; each space's stores
must agree internally.

Every stage records into a per-sample trace so a bad final ranking can be
audited back to the stage that caused it.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional, Sequence, Union

import numpy as np

from .config import PipelineConfig
from .dataset import Sample, load_dataset
from .embedding import EmbeddingStore, read_store
from .fusion import (
    FusedScore,
    FusionInput,
    MlpParams,
    TransformerParams,
    average_fuse,
    load_checkpoint,
    mlp_fuse,
    pad_retrieved,
    rank_candidates,
    save_checkpoint,
    transformer_fuse,
)
from .metrics import RankRecord, RankReport, rank_of_gold, write_report
from .provider import fetch_embeddings, text_key
from .retrieval import build_index, retrieve_for_samples
from .senses import GlossMatch, build_prompt, load_inventory, match_gloss, normalize_lemma
from .train import TrainConfig, TrainReport, train_fuser

__all__ = [
    "StageTrace",
    "PreparedSample",
    "prepare_samples",
    "trace_samples",
    "run_pipeline",
    "run_training",
    "write_traces",
]


@dataclass(frozen=True)
class StageTrace:
    """One sample's journey through every pipeline stage."""

    sample_id: str
    target_word: str
    matched: bool
    synset_id: Optional[str]
    similarity: Optional[float]
    prompt: str
    retrieved: tuple[tuple[str, float], ...]
    probabilities: tuple[float, ...]
    ranking: tuple[int, ...]
    top1: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "sample": self.sample_id,
                "target": self.target_word,
                "matched": self.matched,
                "synset": self.synset_id,
                "similarity": self.similarity,
                "prompt": self.prompt,
                "retrieved": [[i, s] for i, s in self.retrieved],
                "probabilities": list(self.probabilities),
                "ranking": list(self.ranking),
                "top1": self.top1,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class PreparedSample:
    """Everything needed to fuse and rank one sample."""

    sample: Sample
    matched: bool
    synset_id: Optional[str]
    similarity: Optional[float]
    prompt: str
    retrieved: tuple[tuple[str, float], ...]
    fusion_input: FusionInput


def _lookup(store: EmbeddingStore, key: str, sample_id: str, stage: str, detail: str = ""):
    vector = store.get(key)
    if vector is None:
        suffix = f" for {detail}" if detail else ""
        raise ValueError(f"sample {sample_id}: missing {stage} embedding{suffix}")
    return vector


def prepare_samples(config: PipelineConfig) -> list[PreparedSample]:
    """Run the per-sample stages up to (but not including) fusion."""
    config.validate_inputs()
    load = load_dataset(config.dataset, config.gold)
    if not load.samples:
        raise ValueError("dataset has no usable samples")
    inventory = load_inventory(config.inventory)
    gloss_store = read_store(config.gloss_store)
    candidate_store = read_store(config.candidate_store)
    corpus_store = read_store(config.corpus_store)
    if candidate_store.dim != corpus_store.dim:
        raise ValueError(
            f"candidate store dim {candidate_store.dim} != corpus dim {corpus_store.dim}"
        )
    index = build_index(corpus_store)

    contexts = [s.context for s in load.samples]
    if config.provider is not None:
        context_store = fetch_embeddings(
            config.provider, contexts, cache_path=config.context_store
        )
    else:
        context_store = read_store(config.context_store)
    if context_store.dim != gloss_store.dim:
        raise ValueError(
            f"context store dim {context_store.dim} != gloss store dim {gloss_store.dim}"
        )

    # Stage 1–2: sense match and prompt construction.
    matches: list[tuple[Sample, GlossMatch, str]] = []
    for sample in load.samples:
        context_emb = _lookup(context_store, text_key(sample.context), sample.id, "context")
        entries = inventory.senses_for(normalize_lemma(sample.target_word))
        gloss_embs = [
            _lookup(gloss_store, entry.synset_id, sample.id, "gloss", f"sense {entry.synset_id}")
            for entry in entries
        ]
        match = match_gloss(context_emb, gloss_embs, entries)
        prompt = build_prompt(sample.context, sample.target_word, match)
        matches.append((sample, match, prompt))

    # Stage 3: prompt embeddings (one batched fetch when a provider is set).
    prompts = [prompt for _, _, prompt in matches]
    if config.provider is not None:
        prompt_store = fetch_embeddings(
            config.provider, prompts, cache_path=config.prompt_store
        )
    else:
        prompt_store = read_store(config.prompt_store)
    if prompt_store.dim != corpus_store.dim:
        raise ValueError(
            f"prompt store dim {prompt_store.dim} != corpus dim {corpus_store.dim}"
        )

    # Stage 4: top-k retrieval, deduplicated by prompt content.
    queries = EmbeddingStore(prompt_store.dim)
    for sample, _, prompt in matches:
        key = text_key(prompt)
        if key not in queries:
            queries.add(key, _lookup(prompt_store, key, sample.id, "prompt"))
    results = retrieve_for_samples(
        index, queries, k=config.k, cache_path=config.retrieval_cache
    )

    prepared: list[PreparedSample] = []
    for sample, match, prompt in matches:
        prompt_emb = prompt_store[text_key(prompt)]
        hits = results[text_key(prompt)]
        retrieved_embs = [index.vector(image_id) for image_id in hits.ids()]
        candidate_embs = tuple(
            _lookup(candidate_store, cid, sample.id, "candidate", f"image {cid}")
            for cid in sample.candidate_image_ids
        )
        fusion_input = FusionInput(
            context_emb=prompt_emb,
            retrieved_embs=pad_retrieved(prompt_emb, retrieved_embs),
            candidate_embs=candidate_embs,
            gold_index=sample.gold_index,
        )
        prepared.append(
            PreparedSample(
                sample=sample,
                matched=match.matched,
                synset_id=match.entry.synset_id if match.matched else None,
                similarity=match.similarity,
                prompt=prompt,
                retrieved=hits.hits,
                fusion_input=fusion_input,
            )
        )
    return prepared


def _load_fuser_params(config: PipelineConfig):
    if config.fuser not in ("mlp", "transformer"):
        return None
    if config.checkpoint is None:
        raise ValueError(f"fuser {config.fuser!r} needs a checkpoint path in the config")
    params, _ = load_checkpoint(config.checkpoint)
    expected = MlpParams if config.fuser == "mlp" else TransformerParams
    if not isinstance(params, expected):
        raise ValueError(
            f"checkpoint at {config.checkpoint} holds a"
            f" {type(params).__name__}, but the config asks for {config.fuser!r}"
        )
    return params


def _fuse(kind: str, fusion_input: FusionInput, params, scale: float) -> FusedScore:
    if kind == "average":
        return average_fuse(fusion_input, scale)
    if kind == "clip-aug":
        # No fusion: every source slot holds the prompt embedding itself.
        degenerate = FusionInput(
            context_emb=fusion_input.context_emb,
            retrieved_embs=(fusion_input.context_emb,) * 3,
            candidate_embs=fusion_input.candidate_embs,
            gold_index=fusion_input.gold_index,
        )
        return average_fuse(degenerate, scale)
    if kind == "mlp":
        return mlp_fuse(fusion_input, params, scale)
    return transformer_fuse(fusion_input, params, scale)


def trace_samples(config: PipelineConfig) -> tuple[list[PreparedSample], list[StageTrace]]:
    """Fuse and rank every sample, recording a full per-stage trace.

    Works without gold labels; rank metrics are layered on top by
    ``run_pipeline``.
    """
    prepared = prepare_samples(config)
    params = _load_fuser_params(config)

    traces: list[StageTrace] = []
    for p in prepared:
        score = _fuse(config.fuser, p.fusion_input, params, config.scale)
        ranking = rank_candidates(score)
        top1 = p.sample.candidate_image_ids[ranking[0]]
        traces.append(
            StageTrace(
                sample_id=p.sample.id,
                target_word=p.sample.target_word,
                matched=p.matched,
                synset_id=p.synset_id,
                similarity=p.similarity,
                prompt=p.prompt,
                retrieved=p.retrieved,
                probabilities=tuple(float(x) for x in score.probabilities),
                ranking=tuple(ranking),
                top1=top1,
            )
        )
    return prepared, traces


def run_pipeline(
    config: PipelineConfig,
) -> tuple[RankReport, list[StageTrace]]:
    """Evaluate the configured fuser over the whole dataset.

    Writes the rank report to ``config.report`` (when set) and returns it
    with the per-sample traces; ``write_traces`` serializes those.  Needs a
    gold file — rank metrics are undefined without labels.
    """
    prepared, traces = trace_samples(config)

    rows: list[tuple[RankRecord, str]] = []
    for p, trace in zip(prepared, traces):
        if p.sample.gold_index is None:
            raise ValueError(
                f"sample {p.sample.id} has no gold label; evaluation needs a gold file"
            )
        gold_rank = rank_of_gold(list(trace.ranking), p.sample.gold_index)
        rows.append((RankRecord(sample_id=p.sample.id, gold_rank=gold_rank), trace.top1))

    if config.report is not None:
        report = write_report(config.report, rows)
    else:
        report = write_report(io.StringIO(), rows)
    if config.trace is not None:
        write_traces(config.trace, traces)
    return report, traces


def write_traces(sink: Union[str, Path, IO[str]], traces: Sequence[StageTrace]) -> None:
    """Serialize traces as one JSON record per line, ordered by sample id."""
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as f:
            write_traces(f, traces)
        return
    for trace in sorted(traces, key=lambda t: t.sample_id):
        sink.write(trace.to_json() + "\n")


def run_training(config: PipelineConfig, log: Optional[IO[str]] = None) -> TrainReport:
    """Train the configured fuser and write its checkpoint.

    The validation split holds out ``config.val_holdout`` samples chosen by
    a seeded shuffle.  An existing checkpoint is resumed; 0 configured
    epochs then reproduces it bit-for-bit.
    """
    if config.fuser not in ("mlp", "transformer"):
        raise ValueError(f"{config.fuser} fuser has no trainable parameters")
    if config.checkpoint is None:
        raise ValueError("training needs a checkpoint path in the config")

    prepared = prepare_samples(config)
    for p in prepared:
        if p.sample.gold_index is None:
            raise ValueError(f"sample {p.sample.id} has no gold label; training needs one")
    inputs = [p.fusion_input for p in prepared]

    n = len(inputs)
    if config.val_holdout >= n:
        raise ValueError(
            f"validation holdout {config.val_holdout} must be smaller than"
            f" the {n}-sample dataset"
        )
    order = np.random.default_rng(config.seed).permutation(n)
    val_idx = sorted(int(i) for i in order[: config.val_holdout])
    train_idx = sorted(int(i) for i in order[config.val_holdout :])
    train_set = [inputs[i] for i in train_idx]
    val_set = [inputs[i] for i in val_idx]

    overrides = {}
    if config.epochs is not None:
        overrides["epochs"] = config.epochs
    if config.learning_rate is not None:
        overrides["learning_rate"] = config.learning_rate
    if config.batch_size is not None:
        overrides["batch_size"] = config.batch_size
    train_config = TrainConfig.defaults_for(
        config.fuser, seed=config.seed, scale=config.scale, **overrides
    )

    params = None
    if Path(config.checkpoint).exists():
        params, _ = load_checkpoint(config.checkpoint)
        expected = MlpParams if config.fuser == "mlp" else TransformerParams
        if not isinstance(params, expected):
            raise ValueError(
                f"checkpoint at {config.checkpoint} holds a"
                f" {type(params).__name__}, but the config asks for {config.fuser!r}"
            )

    history_sink: Optional[IO[str]] = log
    history_file = None
    if history_sink is None and config.history is not None:
        history_file = open(config.history, "w", encoding="utf-8")
        history_sink = history_file
    try:
        report = train_fuser(train_config, train_set, val_set, params=params, log=history_sink)
    finally:
        if history_file is not None:
            history_file.close()

    save_checkpoint(config.checkpoint, report.params, config.scale)
    return report
