"""Fuser training: Adam over the tape-recorded fusion forwards.

The embeddings themselves are frozen inputs; the only trainable weights are
the fuser's.  Per-fuser defaults: the MLP trains for 3 epochs at learning
rate 5e-5, the transformer for 5 epochs at 3e-6.  Runs are bit-reproducible
given (seed, config, data): epoch shuffles come from one seeded generator
and batch losses are averaged in a fixed order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .embedding import DEFAULT_SCALE, softmax
from .fusion import (
    FusedScore,
    FusionInput,
    MlpParams,
    TransformerParams,
    mlp_forward,
    rank_candidates,
    transformer_forward,
    wrap_tensors,
)
from .metrics import RankRecord, hit_at_1, mrr, rank_of_gold

__all__ = [
    "ADAM_BETA1",
    "ADAM_BETA2",
    "ADAM_EPS",
    "DEFAULT_BATCH_SIZE",
    "TrainConfig",
    "TrainReport",
    "AdamState",
    "adam_step",
    "train_fuser",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_BATCH_SIZE = 32

_FUSER_DEFAULTS = {
    "mlp": {"epochs": 3, "learning_rate": 5e-5},
    "transformer": {"epochs": 5, "learning_rate": 3e-6},
}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    fuser: str
    epochs: int
    learning_rate: float
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0
    scale: float = DEFAULT_SCALE

    def __post_init__(self) -> None:
        if self.fuser not in _FUSER_DEFAULTS:
            raise ValueError(f"unknown fuser kind {self.fuser!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not self.scale > 0:
            raise ValueError("softmax scale must be positive")

    @classmethod
    def defaults_for(cls, fuser: str, **overrides) -> "TrainConfig":
        """Per-fuser default config: mlp 3 epochs @ 5e-5, transformer 5 @ 3e-6."""
        if fuser not in _FUSER_DEFAULTS:
            raise ValueError(f"unknown fuser kind {fuser!r}")
        settings = dict(_FUSER_DEFAULTS[fuser])
        settings.update(overrides)
        return cls(fuser=fuser, **settings)


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Union[MlpParams, TransformerParams],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[Union[MlpParams, TransformerParams], AdamState]:
    """One Adam update over every parameter tensor, in place.

    Zero gradients leave parameters bitwise unchanged (the first-moment
    estimate stays zero, so the step is exactly zero) while the stored
    moments still decay.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"non-finite gradient for {name}")

    state.step += 1
    t = state.step
    tensors = params.tensors()
    for name, arr in tensors.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(arr)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(arr)
            v = np.zeros_like(arr)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        params.set_tensor(name, (arr - update).astype(arr.dtype))
    return params, state


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch history plus the trained parameters."""

    epoch_losses: tuple[float, ...]
    train_hit: tuple[float, ...]
    train_mrr: tuple[float, ...]
    val_hit: tuple[Optional[float], ...]
    val_mrr: tuple[Optional[float], ...]
    params: Union[MlpParams, TransformerParams]

    def __post_init__(self) -> None:
        n = len(self.epoch_losses)
        for name in ("train_hit", "train_mrr", "val_hit", "val_mrr"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} history length != {n} epochs")


def _forward(sample: FusionInput, tensors, config: TrainConfig, params) -> ad.Tensor:
    if config.fuser == "mlp":
        logits, _ = mlp_forward(sample, tensors, config.scale)
    else:
        logits, _ = transformer_forward(
            sample, tensors, params.heads, params.n_layers, config.scale
        )
    return logits


def _evaluate(samples: Sequence[FusionInput], config: TrainConfig, params) -> tuple[float, float]:
    records = []
    tensors = wrap_tensors(params)
    for i, sample in enumerate(samples):
        logits = _forward(sample, tensors, config, params)
        score = FusedScore(probabilities=softmax(logits.data, 1.0))
        ranking = rank_candidates(score)
        records.append(RankRecord(f"s{i:05d}", rank_of_gold(ranking, sample.gold_index)))
    return hit_at_1(records), mrr(records)


def init_params(
    config: TrainConfig, dim: int, **arch
) -> Union[MlpParams, TransformerParams]:
    """Fresh seeded parameters for the configured fuser kind."""
    if config.fuser == "mlp":
        return MlpParams.init(dim=dim, seed=config.seed, **arch)
    return TransformerParams.init(dim=dim, seed=config.seed, **arch)


def train_fuser(
    config: TrainConfig,
    train_set: Sequence[FusionInput],
    val_set: Sequence[FusionInput] = (),
    params: Union[MlpParams, TransformerParams, None] = None,
    log: Optional[IO[str]] = None,
) -> TrainReport:
    """Run the full training loop and return parameters plus history.

    Every training sample must carry a gold index.  ``params`` may be given
    to resume from a checkpoint; otherwise they are seeded from the config.
    A non-finite batch loss aborts with the epoch/batch location.
    """
    if not train_set:
        raise ValueError("training set is empty")
    for i, sample in enumerate(train_set):
        if sample.gold_index is None:
            raise ValueError(f"training sample {i} missing gold label")
    for i, sample in enumerate(val_set):
        if sample.gold_index is None:
            raise ValueError(f"validation sample {i} missing gold label")

    dim = train_set[0].dim
    if params is None:
        params = init_params(config, dim)

    # Shuffles draw from their own stream so resuming with explicit params
    # replays the identical batch order.
    shuffle_rng = np.random.default_rng(config.seed + 1)
    state = AdamState()

    losses: list[float] = []
    train_hits: list[float] = []
    train_mrrs: list[float] = []
    val_hits: list[Optional[float]] = []
    val_mrrs: list[Optional[float]] = []

    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss_terms: list[float] = []
        for batch_start in range(0, n, config.batch_size):
            batch_no = batch_start // config.batch_size + 1
            batch = [train_set[int(i)] for i in order[batch_start : batch_start + config.batch_size]]
            tensors = wrap_tensors(params)
            sample_losses = [
                ad.cross_entropy(_forward(sample, tensors, config, params), sample.gold_index)
                for sample in batch
            ]
            batch_loss = ad.mean(sample_losses)
            loss_value = float(batch_loss.data)
            if not np.isfinite(loss_value):
                raise ValueError(
                    f"training diverged at epoch {epoch} batch {batch_no}:"
                    f" loss {loss_value}"
                )
            ad.backward(batch_loss)
            grads = {name: t.gradient() for name, t in tensors.items()}
            params, state = adam_step(params, grads, state, config.learning_rate)
            epoch_loss_terms.append(loss_value)

        mean_loss = float(np.mean(epoch_loss_terms))
        train_hit, train_mrr_ = _evaluate(train_set, config, params)
        if val_set:
            val_hit, val_mrr_ = _evaluate(val_set, config, params)
        else:
            val_hit = val_mrr_ = None
        losses.append(mean_loss)
        train_hits.append(train_hit)
        train_mrrs.append(train_mrr_)
        val_hits.append(val_hit)
        val_mrrs.append(val_mrr_)
        if log is not None:
            log.write(
                json.dumps(
                    {
                        "epoch": epoch,
                        "loss": mean_loss,
                        "train_hit_at_1": train_hit,
                        "train_mrr": train_mrr_,
                        "val_hit_at_1": val_hit,
                        "val_mrr": val_mrr_,
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    return TrainReport(
        epoch_losses=tuple(losses),
        train_hit=tuple(train_hits),
        train_mrr=tuple(train_mrrs),
        val_hit=tuple(val_hits),
        val_mrr=tuple(val_mrrs),
        params=params,
    )
