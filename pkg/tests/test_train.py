"""Optimizer and training-loop tests.

The synthetic task plants a recoverable solution (gold = context + noise,
distractors orthogonal), so the MLP fuser must reach high held-out HIT@1
within a few epochs at its stock learning rate.
"""

import io
import json

import numpy as np
import pytest

from vwsd import autodiff as ad
from vwsd.fusion import (
    FusionInput,
    MlpParams,
    TransformerParams,
    mlp_forward,
    transformer_forward,
)
from vwsd.train import (
    ADAM_BETA1,
    ADAM_BETA2,
    AdamState,
    TrainConfig,
    adam_step,
    train_fuser,
)

from _synthetic import separable_task
from test_autodiff import assert_grads_close, finite_diff


def unit(v):
    return v / np.linalg.norm(v)


def random_sample(rng, dim, n_candidates=4, gold=1):
    return FusionInput(
        context_emb=unit(rng.standard_normal(dim)),
        retrieved_embs=tuple(unit(rng.standard_normal(dim)) for _ in range(3)),
        candidate_embs=tuple(unit(rng.standard_normal(dim)) for _ in range(n_candidates)),
        gold_index=gold,
    )


# --- config ---


def test_defaults_mlp():
    config = TrainConfig.defaults_for("mlp")
    assert config.epochs == 3
    assert config.learning_rate == 5e-5
    assert config.batch_size == 32


def test_defaults_transformer():
    config = TrainConfig.defaults_for("transformer")
    assert config.epochs == 5
    assert config.learning_rate == 3e-6


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        TrainConfig.defaults_for("average")
    with pytest.raises(ValueError):
        TrainConfig(fuser="mlp", epochs=-1, learning_rate=5e-5)
    with pytest.raises(ValueError):
        TrainConfig(fuser="mlp", epochs=3, learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(fuser="mlp", epochs=3, learning_rate=5e-5, batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(fuser="mlp", epochs=3, learning_rate=5e-5, scale=-1.0)


# --- adam ---


def test_adam_zero_gradients_is_exact_noop():
    params = MlpParams.init(dim=4, seed=7)
    before = {name: arr.copy() for name, arr in params.tensors().items()}
    state = AdamState(
        m={name: np.zeros_like(arr) for name, arr in before.items()},
        v={name: np.full_like(arr, 0.5) for name, arr in before.items()},
        step=3,
    )
    grads = {name: np.zeros_like(arr) for name, arr in before.items()}
    params, state = adam_step(params, grads, state, lr=1e-3)
    for name, arr in params.tensors().items():
        assert np.array_equal(arr, before[name]), name
    # The step still runs: second moments decay by beta2, first stay zero.
    for name in before:
        assert np.array_equal(state.v[name], ADAM_BETA2 * np.full_like(before[name], 0.5))
        assert not state.m[name].any()
    assert state.step == 4


def test_adam_constant_unit_gradient_steps_by_lr():
    lr = 1e-3
    params = MlpParams.init(dim=2, hidden=2, seed=0, dtype=np.float64)
    w1_before = params.tensors()["mlp.w1"].copy()
    state = AdamState()
    for _ in range(20):
        prev = params.tensors()["mlp.b2"].copy()
        params, state = adam_step(
            params, {"mlp.b2": np.ones(2)}, state, lr=lr
        )
        delta = prev - params.tensors()["mlp.b2"]
        # Bias correction cancels for a constant gradient, so every step
        # has magnitude lr/(1+eps).
        assert np.allclose(delta, lr, rtol=1e-6)
    # Tensors that never received a gradient are bitwise untouched.
    assert np.array_equal(params.tensors()["mlp.w1"], w1_before)


def test_adam_nonfinite_gradient_names_tensor():
    params = MlpParams.init(dim=4, seed=0)
    grads = {name: np.zeros_like(arr) for name, arr in params.tensors().items()}
    grads["mlp.w1"] = grads["mlp.w1"] + np.nan
    with pytest.raises(ValueError, match="non-finite gradient for mlp.w1"):
        adam_step(params, grads, AdamState(), lr=1e-3)


def test_adam_ten_steps_bit_identical():
    def run():
        params = MlpParams.init(dim=8, seed=5)
        state = AdamState()
        rng = np.random.default_rng(42)
        for _ in range(10):
            grads = {
                name: rng.normal(size=arr.shape).astype(arr.dtype)
                for name, arr in params.tensors().items()
            }
            params, state = adam_step(params, grads, state, lr=1e-3)
        return params

    a, b = run(), run()
    for name, arr in a.tensors().items():
        assert arr.tobytes() == b.tensors()[name].tobytes(), name


# --- end-to-end gradient checks (64-bit) ---


def _fd_check(params, build_loss):
    tensors_by_name = params.tensors()
    names = sorted(tensors_by_name)
    arrays = [tensors_by_name[name] for name in names]

    wrapped = {name: ad.Tensor(tensors_by_name[name]) for name in names}
    loss = build_loss(wrapped)
    ad.backward(loss)

    def eval_loss():
        fresh = {name: ad.Tensor(tensors_by_name[name]) for name in names}
        return float(build_loss(fresh).data)

    numeric = finite_diff(eval_loss, arrays)
    for name, num in zip(names, numeric):
        assert_grads_close(wrapped[name].gradient(), num)


def test_mlp_loss_matches_finite_differences():
    rng = np.random.default_rng(3)
    sample = random_sample(rng, dim=8)
    params = MlpParams.init(dim=8, seed=3, dtype=np.float64)

    def build_loss(tensors):
        logits, _ = mlp_forward(sample, tensors, scale=7.5)
        return ad.cross_entropy(logits, sample.gold_index)

    _fd_check(params, build_loss)


def test_transformer_loss_matches_finite_differences():
    rng = np.random.default_rng(4)
    sample = random_sample(rng, dim=8)
    params = TransformerParams.init(dim=8, n_layers=1, heads=2, seed=4, dtype=np.float64)

    def build_loss(tensors):
        logits, _ = transformer_forward(sample, tensors, 2, 1, scale=7.5)
        return ad.cross_entropy(logits, sample.gold_index)

    _fd_check(params, build_loss)


# --- train_fuser contract ---


def small_sets(n_train=24, n_val=8, seed=2):
    samples = separable_task(n_train + n_val, seed=seed)
    return samples[:n_train], samples[n_train:]


def test_missing_gold_label_is_rejected():
    train, val = small_sets()
    bad = FusionInput(
        context_emb=train[0].context_emb,
        retrieved_embs=train[0].retrieved_embs,
        candidate_embs=train[0].candidate_embs,
        gold_index=None,
    )
    config = TrainConfig(fuser="mlp", epochs=1, learning_rate=5e-5, batch_size=8)
    with pytest.raises(ValueError, match="training sample 2 missing gold label"):
        train_fuser(config, [train[0], train[1], bad], val)
    with pytest.raises(ValueError, match="validation sample 0 missing gold label"):
        train_fuser(config, train, [bad])


def test_zero_epochs_returns_initialization():
    train, val = small_sets()
    config = TrainConfig(fuser="mlp", epochs=0, learning_rate=5e-5, seed=9)
    report = train_fuser(config, train, val)
    init = MlpParams.init(dim=16, seed=9)
    for name, arr in report.params.tensors().items():
        assert np.array_equal(arr, init.tensors()[name])
    assert report.epoch_losses == ()
    assert report.train_hit == ()
    assert report.val_hit == ()


def test_explicit_params_are_resumed():
    train, val = small_sets()
    start = MlpParams.init(dim=16, seed=123)
    config = TrainConfig(fuser="mlp", epochs=0, learning_rate=5e-5)
    report = train_fuser(config, train, val, params=start)
    assert report.params is start


def test_divergence_error_reports_location():
    train, val = small_sets()
    poisoned = MlpParams.init(dim=16, seed=0)
    poisoned.w1[0, 0] = np.nan
    config = TrainConfig(fuser="mlp", epochs=1, learning_rate=5e-5, batch_size=8)
    with pytest.raises(ValueError, match="epoch 1 batch 1"):
        train_fuser(config, train, val, params=poisoned)


def test_empty_validation_set_reports_none():
    train, _ = small_sets()
    config = TrainConfig(fuser="mlp", epochs=2, learning_rate=5e-5, batch_size=8)
    report = train_fuser(config, train)
    assert report.val_hit == (None, None)
    assert report.val_mrr == (None, None)
    assert len(report.train_hit) == 2


def test_training_log_lines_match_report():
    train, val = small_sets()
    config = TrainConfig(fuser="mlp", epochs=3, learning_rate=5e-5, batch_size=8)
    sink = io.StringIO()
    report = train_fuser(config, train, val, log=sink)
    lines = [json.loads(line) for line in sink.getvalue().splitlines()]
    assert len(lines) == 3
    for i, entry in enumerate(lines):
        assert entry["epoch"] == i + 1
        assert entry["loss"] == report.epoch_losses[i]
        assert entry["train_hit_at_1"] == report.train_hit[i]
        assert entry["train_mrr"] == report.train_mrr[i]
        assert entry["val_hit_at_1"] == report.val_hit[i]
        assert entry["val_mrr"] == report.val_mrr[i]


def test_training_is_bit_reproducible():
    train, val = small_sets(n_train=32, n_val=8)
    config = TrainConfig(fuser="mlp", epochs=2, learning_rate=5e-5, batch_size=8, seed=1)

    def run():
        return train_fuser(config, train, val)

    a, b = run(), run()
    assert a.epoch_losses == b.epoch_losses
    assert a.train_hit == b.train_hit
    assert a.val_mrr == b.val_mrr
    for name, arr in a.params.tensors().items():
        assert arr.tobytes() == b.params.tensors()[name].tobytes(), name


def test_transformer_trains_one_epoch():
    train, val = small_sets(n_train=16, n_val=4)
    config = TrainConfig(fuser="transformer", epochs=1, learning_rate=3e-6, batch_size=8)
    report = train_fuser(config, train, val)
    assert len(report.epoch_losses) == 1
    assert isinstance(report.params, TransformerParams)
    assert np.isfinite(report.epoch_losses[0])


# --- the planted-solution benchmark ---


@pytest.fixture(scope="module")
def synthetic_run():
    samples = separable_task(600, seed=11)
    config = TrainConfig(
        fuser="mlp", epochs=10, learning_rate=5e-5, batch_size=1, seed=0
    )
    return train_fuser(config, samples[:500], samples[500:])


def test_mlp_solves_separable_task(synthetic_run):
    assert max(h for h in synthetic_run.val_hit) >= 0.95


def test_mean_epoch_loss_nonincreasing_first_five(synthetic_run):
    losses = synthetic_run.epoch_losses[:5]
    for earlier, later in zip(losses, losses[1:]):
        assert later <= earlier
