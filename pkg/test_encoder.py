#!/usr/bin/env python3
"""
🧪 Encoder: head-replacement schedule, degeneracy to softmax, padding, determinism
"""
import numpy as np
import pytest

from combined_attention import AttentionConfig, AttentionMode, NormVariant
from encoder import EncoderConfig, encode, init_encoder_params, positional_encoding
from tensor_core import DomainError, Graph, Tensor, finite_diff_check, make_rng, mul, sum_all


def tiny_config(**overrides) -> EncoderConfig:
    options = dict(num_layers=2, d_model=8, num_heads=2, d_ff=16, vocab_size=12, max_seq_len=16)
    options.update(overrides)
    return EncoderConfig(**options)


def test_default_schedule_rounds_half_up():
    config = EncoderConfig(vocab_size=10)
    assert [config.replaced_heads(i) for i in range(4)] == [2, 2, 1, 0]
    assert config.d_ff == 4 * config.d_model
    assert config.attention.d_model == 64 and config.attention.num_heads == 4


def test_schedule_fraction_clamps_to_head_count():
    config = EncoderConfig(num_heads=2, d_model=8, replacement_schedule=[1.0, 0.25, 0.0], vocab_size=5)
    assert [config.replaced_heads(i) for i in range(3)] == [2, 1, 0]


def test_softmax_baseline_replaces_no_heads():
    config = EncoderConfig(vocab_size=5, attention=AttentionConfig(mode=AttentionMode.SOFTMAX_BASELINE))
    assert all(config.replaced_heads(i) == 0 for i in range(config.num_layers))


def test_invalid_shapes_are_rejected():
    with pytest.raises(ValueError):
        EncoderConfig(d_model=10, num_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(replacement_schedule=[1.5])
    with pytest.raises(ValueError):
        EncoderConfig(d_model=8, num_heads=2, attention=AttentionConfig(d_model=16))


def test_positional_encoding_closed_form():
    table = positional_encoding(3, 4)
    assert table[0].tolist() == [0.0, 1.0, 0.0, 1.0]
    assert table[2, 2] == pytest.approx(np.sin(2 / 100.0))


def test_zero_schedule_is_bit_identical_to_softmax_encoder():
    combined = tiny_config(replacement_schedule=[0.0, 0.0])
    softmax = tiny_config(replacement_schedule=[0.5, 0.5],
                          attention=AttentionConfig(mode=AttentionMode.SOFTMAX_BASELINE))
    params = init_encoder_params(combined, make_rng(3))
    tokens = [1, 4, 5, 2, 7, 9]
    a = encode(tokens, None, combined, params, Graph())
    b = encode(tokens, None, softmax, params, Graph())
    np.testing.assert_array_equal(a.data, b.data)


def test_no_layers_returns_the_embedding():
    config = tiny_config(num_layers=0)
    params = init_encoder_params(config, make_rng(0))
    out = encode([3, 4], None, config, params, Graph())
    expected = params["embed.tokens"][[3, 4]] + positional_encoding(2, 8)
    np.testing.assert_array_equal(out.data, expected)


def test_empty_sequence_gives_empty_output():
    config = tiny_config(attention=AttentionConfig(norm_variant=NormVariant.CENTER_N))
    params = init_encoder_params(config, make_rng(0))
    assert encode([], None, config, params, Graph()).shape == (0, 8)


def test_out_of_range_token_is_domain_error():
    config = tiny_config()
    params = init_encoder_params(config, make_rng(0))
    with pytest.raises(DomainError):
        encode([3, 12], None, config, params, Graph())


def test_sequence_longer_than_max_seq_len():
    config = tiny_config(max_seq_len=3)
    params = init_encoder_params(config, make_rng(0))
    with pytest.raises(DomainError):
        encode([3, 4, 5, 6], None, config, params, Graph())


def test_same_seed_same_parameters_and_outputs():
    config = tiny_config()
    first = init_encoder_params(config, make_rng(9))
    second = init_encoder_params(config, make_rng(9))
    assert first.keys() == second.keys()
    for name in first:
        np.testing.assert_array_equal(first[name], second[name])
    tokens = [1, 3, 3, 8]
    np.testing.assert_array_equal(
        encode(tokens, None, config, first, Graph()).data,
        encode(tokens, None, config, second, Graph()).data,
    )


@pytest.mark.parametrize("norm", [NormVariant.NONE, NormVariant.CENTER_N, NormVariant.CENTER_E])
def test_padding_does_not_leak_into_real_positions(norm):
    config = tiny_config(replacement_schedule=[0.5, 1.0], attention=AttentionConfig(norm_variant=norm))
    params = init_encoder_params(config, make_rng(4))
    tokens = [1, 5, 6, 2, 9]
    plain = encode(tokens, None, config, params, Graph())
    mask = np.array([True] * 5 + [False] * 3)
    padded = encode(tokens + [0, 0, 0], mask, config, params, Graph())
    np.testing.assert_allclose(padded.data[:5], plain.data, rtol=0, atol=1e-10)


def test_traces_record_only_combined_heads():
    config = tiny_config(replacement_schedule=[0.5, 0.0])
    params = init_encoder_params(config, make_rng(1))
    traces = {}
    encode([1, 4, 2, 5], None, config, params, Graph(), traces=traces)
    assert set(traces[0]) == {0}
    assert traces[1] == {}
    assert traces[0][0].m.shape == (4, 4)


def test_encoder_gradients_pass_finite_differences():
    config = tiny_config()
    params = init_encoder_params(config, make_rng(6))
    tokens = [1, 4, 7, 2, 3, 5]
    weights = Tensor(make_rng(7).normal(size=(6, 8)))

    def f(graph):
        return sum_all(mul(encode(tokens, None, config, params, graph), weights))

    report = finite_diff_check(f, params, rng=make_rng(0), max_coords=10)
    assert report.passed(), report.to_dict()
