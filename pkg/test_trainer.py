#!/usr/bin/env python3
"""
🧪 Trainer: Adam, clipping, determinism, memorization, divergence reporting
"""
import math

import numpy as np
import pytest

from encoder import EncoderConfig
from matcher import MatcherConfig, PairExample, PairMatcher
from synthetic_data import SyntheticSpec, generate, vocabulary_size
from trainer import (
    AdamOptimizer,
    TrainConfig,
    TrainingDivergedError,
    batch_gradients,
    batch_loss,
    clip_gradients,
    train,
)
from tensor_core import DomainError


SPEC = SyntheticSpec(num_examples=40, seed=3, min_len=4, max_len=6)


def tiny_model(seed=0) -> PairMatcher:
    encoder = EncoderConfig(num_layers=2, d_model=8, num_heads=2, d_ff=16,
                            vocab_size=vocabulary_size(SPEC), max_seq_len=16)
    return PairMatcher.initialize(encoder, MatcherConfig(), seed)


@pytest.fixture(scope="module")
def data():
    return generate(SPEC)


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 0.0])}
    AdamOptimizer(lr=0.1).step(params, grads)
    # bias-corrected first step is lr × sign(g) (up to eps)
    np.testing.assert_allclose(params["w"], [0.9, -1.9, 0.5], atol=1e-6)


def test_adam_skips_parameters_without_gradient():
    params = {"w": np.ones(2), "frozen": np.ones(2)}
    AdamOptimizer(lr=0.1).step(params, {"w": np.ones(2)})
    np.testing.assert_array_equal(params["frozen"], np.ones(2))


def test_clip_gradients_scales_to_max_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert math.sqrt(grads["a"][0] ** 2 + grads["b"][0] ** 2) == pytest.approx(1.0)


def test_clip_disabled_leaves_gradients():
    grads = {"a": np.array([3.0, 4.0])}
    clip_gradients(grads, None)
    np.testing.assert_array_equal(grads["a"], [3.0, 4.0])


def test_zero_learning_rate_freezes_parameters(data):
    model = tiny_model()
    before = {name: value.copy() for name, value in model.params.items()}
    train(model, data[:30], TrainConfig(lr=0.0, epochs=2, batch_size=8), data[30:])
    for name, value in before.items():
        np.testing.assert_array_equal(model.params[name], value)


def test_seeded_runs_repeat_exactly(data):
    config = TrainConfig(epochs=1, batch_size=8, seed=11)
    first = train(tiny_model(), data, config)
    second = train(tiny_model(), data, config)
    assert first.loss_curve == second.loss_curve
    assert first.epochs == second.epochs


def test_report_shape(data):
    report = train(tiny_model(), data[:32], TrainConfig(epochs=2, batch_size=8), data[32:],
                   run_config={"echo": True})
    assert report.steps == 8
    assert len(report.loss_curve) == 8
    assert [e.epoch for e in report.epochs] == [0, 1]
    assert report.best_epoch in (0, 1)
    assert report.dev_metrics.total == 8
    assert report.config == {"echo": True}


def test_max_steps_stops_early(data):
    report = train(tiny_model(), data[:32], TrainConfig(epochs=5, batch_size=4, max_steps=3), data[32:])
    assert report.steps == 3
    assert len(report.epochs) == 1


def test_fixed_batch_loss_decreases_for_five_steps(data):
    model = tiny_model(seed=2)
    batch = data[:8]
    optimizer = AdamOptimizer()
    losses = [batch_loss(model, batch)]
    for _ in range(5):
        _, grads = batch_gradients(model, batch)
        clip_gradients(grads, 1.0)
        optimizer.step(model.params, grads)
        losses.append(batch_loss(model, batch))
    assert all(later < earlier for earlier, later in zip(losses, losses[1:])), losses


def test_small_step_does_not_increase_loss(data):
    batch = data[:4]
    for seed in range(20):
        model = tiny_model(seed=seed)
        before = batch_loss(model, batch)
        _, grads = batch_gradients(model, batch)
        AdamOptimizer(lr=1e-5).step(model.params, grads)
        assert batch_loss(model, batch) <= before + 1e-12


def test_single_example_is_memorized():
    example = PairExample(tokens_q=[3, 4, 20, 50], tokens_p=[3, 4, 21, 50], label=0)
    model = tiny_model(seed=1)
    config = TrainConfig(lr=1e-2, epochs=200, batch_size=1, clip_norm=None)
    report = train(model, [example], config, [example])
    assert report.steps == 200
    assert report.loss_curve[-1] < 0.01


def test_divergence_names_the_step(data):
    model = tiny_model()
    model.params["head.b"][:] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train(model, data[:8], TrainConfig(epochs=1, batch_size=4), data[8:12])
    assert info.value.step == 0
    assert "step 0" in str(info.value)


def test_empty_split_is_rejected(data):
    with pytest.raises(DomainError):
        train(tiny_model(), data[:4], TrainConfig(), [])


def test_invalid_train_config():
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
