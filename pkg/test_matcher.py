#!/usr/bin/env python3
"""
🧪 Pair matcher: logits contract, siamese symmetry, evaluation metrics, checkpoints
"""
import numpy as np
import pytest

from checkpoint import load_checkpoint, save_checkpoint
from combined_attention import AttentionConfig
from encoder import EncoderConfig
from matcher import (
    CLS_ID,
    SEP_ID,
    EncodingMode,
    MatcherConfig,
    PairExample,
    PairInputError,
    PairMatcher,
    PerturbationTag,
    Pooling,
    classify,
    compare_reports,
    evaluate,
    pair_similarity,
)
from tensor_core import DomainError, Graph, finite_diff_check, make_rng


def tiny_encoder(**overrides) -> EncoderConfig:
    options = dict(num_layers=2, d_model=8, num_heads=2, d_ff=16, vocab_size=20, max_seq_len=32)
    options.update(overrides)
    return EncoderConfig(**options)


def make_model(mode=EncodingMode.CROSS, seed=0, encoder=None, **matcher_options) -> PairMatcher:
    return PairMatcher.initialize(encoder or tiny_encoder(), MatcherConfig(mode=mode, **matcher_options), seed)


def pair(q, p, label=1, tag=PerturbationTag.NONE) -> PairExample:
    return PairExample(tokens_q=q, tokens_p=p, label=label, perturbation_tag=tag)


class ConstantModel:
    """Stand-in predictor with a fixed answer, for metric arithmetic"""

    def __init__(self, answer, num_classes=2):
        self.answer = answer
        self.matcher_config = MatcherConfig(num_classes=num_classes)

    def predict(self, example):
        return self.answer(example) if callable(self.answer) else self.answer


@pytest.mark.parametrize("mode", list(EncodingMode))
@pytest.mark.parametrize("num_classes", [2, 3])
def test_logits_shape(mode, num_classes):
    model = make_model(mode, num_classes=num_classes)
    logits = classify(pair([3, 4, 5], [6, 7]), model)
    assert logits.shape == (num_classes,)


@pytest.mark.parametrize("mode", list(EncodingMode))
def test_empty_side_is_input_error(mode):
    model = make_model(mode)
    with pytest.raises(PairInputError):
        classify(pair([], [3, 4]), model)
    with pytest.raises(PairInputError):
        classify(pair([3], []), model)


def test_cross_inputs_layout_and_padding():
    model = make_model(pad_to=10)
    tokens, segments, mask = model.cross_inputs(pair([5, 6], [7, 8, 9]))
    assert tokens == [CLS_ID, 5, 6, SEP_ID, 7, 8, 9, 0, 0, 0]
    assert segments == [0, 0, 0, 0, 1, 1, 1, 0, 0, 0]
    assert mask.tolist() == [True] * 7 + [False] * 3


def test_pad_to_does_not_change_the_prediction():
    plain = make_model(seed=3)
    padded = PairMatcher(plain.encoder_config, MatcherConfig(pad_to=16), plain.params)
    example = pair([5, 6, 7], [5, 6, 8])
    np.testing.assert_allclose(
        classify(example, padded).data, classify(example, plain).data, rtol=0, atol=1e-10
    )


def test_over_long_pair_with_pad_to():
    model = make_model(pad_to=4)
    with pytest.raises(PairInputError):
        classify(pair([3, 4, 5], [6]), model)


def test_identical_sides_give_zero_gap_in_siamese_mode():
    model = make_model(EncodingMode.SIAMESE, seed=2)
    features = model.features(Graph(), pair([3, 4, 5, 6], [3, 4, 5, 6])).data
    d = 8
    assert features.shape == (1, 4 * d)
    np.testing.assert_allclose(features[0, 2 * d:3 * d], 0.0, atol=1e-12)
    np.testing.assert_allclose(features[0, :d], features[0, d:2 * d], atol=1e-12)


def test_symmetric_siamese_is_order_invariant():
    encoder = tiny_encoder(attention=AttentionConfig(share_projections=True))
    model = make_model(EncodingMode.SIAMESE, seed=5, encoder=encoder, symmetric=True)
    forward = classify(pair([3, 4, 9, 10], [5, 6, 11]), model).data
    backward = classify(pair([5, 6, 11], [3, 4, 9, 10]), model).data
    np.testing.assert_allclose(forward, backward, rtol=0, atol=1e-12)


def test_symmetric_pooling_needs_siamese_mode():
    with pytest.raises(ValueError):
        MatcherConfig(mode=EncodingMode.CROSS, symmetric=True)


@pytest.mark.parametrize("mode", list(EncodingMode))
@pytest.mark.parametrize("pooling", list(Pooling))
def test_loss_gradient_passes_finite_differences(mode, pooling):
    model = make_model(mode, seed=1, pooling=pooling)
    example = pair([3, 4, 5], [3, 7, 5], label=0)

    report = finite_diff_check(lambda graph: model.loss(graph, example), model.params,
                               rng=make_rng(0), max_coords=8)
    assert report.passed(), report.to_dict()


def test_pair_similarity_is_match_probability():
    model = make_model(num_classes=3)
    example = pair([3, 4], [3, 5], label=0)
    probs = model.probabilities(example)
    assert probs.sum() == pytest.approx(1.0)
    assert pair_similarity(example, model) == pytest.approx(probs[0])


def test_evaluate_all_correct():
    data = [pair([3], [4], label=1), pair([5], [6], label=0, tag=PerturbationTag.SWAP_NUM)]
    report = evaluate(data, ConstantModel(lambda example: example.label))
    assert report.accuracy == 1.0
    assert report.confusion == [[1, 0], [0, 1]]


def test_single_class_predictor_on_balanced_set():
    data = [pair([3], [4], label=i % 2) for i in range(10)]
    assert evaluate(data, ConstantModel(1)).accuracy == 0.5


def test_per_tag_accuracy_recombines_exactly():
    tags = [PerturbationTag.NONE, PerturbationTag.SWAP_NUM, PerturbationTag.SWAP_ANT, PerturbationTag.OVERLAP_HIGH]
    rng = np.random.default_rng(0)
    data = [pair([3], [4], label=int(rng.integers(2)), tag=tags[i % 4]) for i in range(37)]
    report = evaluate(data, ConstantModel(0))
    recombined = sum(m.correct for m in report.per_tag.values())
    assert recombined == report.correct
    weighted = sum(m.accuracy * m.count for m in report.per_tag.values()) / report.total
    assert weighted == pytest.approx(report.accuracy, abs=1e-12)
    assert sum(m.count for m in report.per_tag.values()) == 37


def test_evaluate_empty_dataset():
    with pytest.raises(DomainError):
        evaluate([], ConstantModel(0))


def test_evaluate_is_deterministic():
    model = make_model(seed=4)
    data = [pair([3, 4, 5], [3, 4, 6], label=i % 2) for i in range(6)]
    assert evaluate(data, model) == evaluate(data, model)


def test_compare_reports_deltas():
    data = [pair([3], [4], label=1), pair([5], [6], label=0, tag=PerturbationTag.SWAP_ANT)]
    good = evaluate(data, ConstantModel(lambda example: example.label))
    bad = evaluate(data, ConstantModel(1))
    deltas = compare_reports(good, bad)
    assert deltas["overall"] == pytest.approx(0.5)
    assert deltas["swap_ant"] == pytest.approx(1.0)
    assert deltas["none"] == pytest.approx(0.0)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = make_model(EncodingMode.SIAMESE, seed=7)
    path = save_checkpoint(tmp_path / "model.json", model.params, {"note": "x"})
    params, config = load_checkpoint(path)
    assert config == {"note": "x"}
    assert params.keys() == model.params.keys()
    for name, value in model.params.items():
        np.testing.assert_array_equal(params[name], value)


def test_checkpoint_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "other", "version": 1}')
    with pytest.raises(DomainError):
        load_checkpoint(path)
