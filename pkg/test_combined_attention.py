#!/usr/bin/env python3
"""
🧪 Combined attention: oracle equivalence, range/centering invariants, masking, gradients
"""
import math

import numpy as np
import pytest

import scalar_oracle
from combined_attention import (
    AttentionConfig,
    AttentionMode,
    NormVariant,
    ProjectionSet,
    Squash,
    affinity_matrix,
    attend,
    combined_attention_heads,
    compose,
    difference_matrix,
    multi_head_attention,
    normalize_difference,
    softmax_attention_heads,
)
from tensor_core import Graph, Tensor, TensorShapeError, finite_diff_check, mean_all, mul, softmax_rows, sum_all

VARIANTS = [
    (Squash.TANH, Squash.SIGMOID, NormVariant.NONE),
    (Squash.TANH, Squash.SIGMOID, NormVariant.CENTER_N),
    (Squash.TANH, Squash.SIGMOID, NormVariant.CENTER_E),
    (Squash.TANH, Squash.SIGMOID, NormVariant.TWO_SIGMOID),
    (Squash.TANH, Squash.ARCTAN, NormVariant.NONE),
    (Squash.SIGMOID, Squash.TANH, NormVariant.NONE),
    (Squash.SIGMOID, Squash.SIGMOID, NormVariant.NONE),
]


def _options(config: AttentionConfig):
    return {
        "alpha": config.alpha,
        "beta": config.beta,
        "f_e": config.f_e.value,
        "f_n": config.f_n.value,
        "norm_variant": config.norm_variant.value,
    }


def test_affinity_and_difference_definitions():
    a = Tensor([[1.0, 0.0], [0.0, 2.0]])
    b = Tensor([[1.0, 1.0]])
    np.testing.assert_array_equal(affinity_matrix(a, b, 2.0).data, [[2.0], [4.0]])
    np.testing.assert_array_equal(difference_matrix(a, b, 0.5).data, [[-0.5], [-1.0]])


def test_width_mismatch_is_a_shape_error():
    with pytest.raises(TensorShapeError):
        affinity_matrix(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_identical_tokens_give_zero_difference_and_half_gate():
    a = Tensor([[0.3, -0.2, 1.1]])
    n = difference_matrix(a, a)
    assert n.data[0, 0] == 0.0
    m = compose(Tensor([[0.7]]), n, AttentionConfig())
    assert m.data[0, 0] == pytest.approx(0.5 * math.tanh(0.7))


def test_zero_affinity_gives_zero_combined():
    m = compose(Tensor([[0.0, 0.0]]), Tensor([[-3.0, -0.1]]), AttentionConfig())
    np.testing.assert_array_equal(m.data, [[0.0, 0.0]])


def test_compose_shape_mismatch():
    with pytest.raises(TensorShapeError):
        compose(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))), AttentionConfig())


def test_arctan_is_rejected_for_f_e():
    with pytest.raises(ValueError):
        AttentionConfig(f_e=Squash.ARCTAN)


def test_config_label():
    assert AttentionConfig().label == "tanh*sigmoid"
    assert AttentionConfig(norm_variant=NormVariant.CENTER_N).label == "center_n:tanh*sigmoid"
    assert AttentionConfig(mode=AttentionMode.SOFTMAX_BASELINE).label == "softmax_baseline"


@pytest.mark.parametrize("f_e,f_n,norm", VARIANTS)
def test_attend_matches_scalar_oracle(f_e, f_n, norm):
    rng = np.random.default_rng(11)
    config = AttentionConfig(f_e=f_e, f_n=f_n, norm_variant=norm, alpha=rng.uniform(0.5, 2), beta=rng.uniform(0.5, 2))
    for _ in range(50):
        n, m, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 9)
        a, b = rng.normal(size=(n, d)), rng.normal(size=(m, d))
        w_e, w_n = rng.normal(size=(d, d)), rng.normal(size=(d, d))
        shared = bool(rng.integers(2))
        projections = ProjectionSet(w_e=Tensor(w_e), w_n=None if shared else Tensor(w_n))

        a_hat, b_hat, _ = attend(Tensor(a), Tensor(b), projections, config)
        ref_a, ref_b = scalar_oracle.attend(
            a.tolist(), b.tolist(), w_e.tolist(), None if shared else w_n.tolist(), **_options(config)
        )
        np.testing.assert_allclose(a_hat.data, ref_a, rtol=0, atol=1e-10)
        np.testing.assert_allclose(b_hat.data, ref_b, rtol=0, atol=1e-10)


@pytest.mark.parametrize("f_e,f_n,norm", VARIANTS)
def test_multi_head_matches_scalar_oracle(f_e, f_n, norm):
    rng = np.random.default_rng(12)
    for _ in range(50):
        heads = int(rng.integers(1, 3))
        d_k = int(rng.integers(1, 5))
        width, n = heads * d_k, int(rng.integers(1, 6))
        combined = int(rng.integers(0, heads + 1))
        config = AttentionConfig(f_e=f_e, f_n=f_n, norm_variant=norm, num_heads=heads, d_model=width)
        q, k, v = (rng.normal(size=(n, width)) for _ in range(3))
        w_o, b_o = rng.normal(size=(width, width)), rng.normal(size=width)
        mask = rng.random(n) < 0.8
        mask[0] = True

        out = multi_head_attention(
            Tensor(q), Tensor(k), Tensor(v), ProjectionSet(w_o=Tensor(w_o), b_o=Tensor(b_o)),
            config, heads, combined, mask,
        )
        ref = scalar_oracle.multi_head(
            q.tolist(), k.tolist(), v.tolist(), heads, combined, w_o.tolist(), b_o.tolist(),
            mask.tolist(), **_options(config)
        )
        np.testing.assert_allclose(out.data, ref, rtol=0, atol=1e-10)


def test_range_and_centering_invariants():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        f_e, f_n, norm = VARIANTS[rng.integers(len(VARIANTS))]
        config = AttentionConfig(f_e=f_e, f_n=f_n, norm_variant=norm,
                                 alpha=float(rng.uniform(0.1, 3)), beta=float(rng.uniform(0.1, 3)))
        n, m, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 9)
        a = Tensor(rng.normal(scale=rng.uniform(0.1, 5), size=(n, d)))
        b = Tensor(rng.normal(scale=rng.uniform(0.1, 5), size=(m, d)))
        _, _, trace = attend(a, b, ProjectionSet.identity(), config, capture_trace=True)

        assert np.all(trace.n_raw <= 0.0)
        assert np.all(1.0 / (1.0 + np.exp(-trace.n_raw)) <= 0.5)
        bound = {
            Squash.SIGMOID: 1.0,
            Squash.TANH: 1.0,
            Squash.ARCTAN: math.pi / 2,
        }[f_n] * (2.0 if norm == NormVariant.TWO_SIGMOID else 1.0)
        assert np.all(np.abs(trace.m) <= bound + 1e-15)
        if f_e == Squash.TANH and f_n == Squash.SIGMOID and norm == NormVariant.NONE:
            assert np.all(np.abs(trace.m) <= 0.5)
        if norm == NormVariant.CENTER_N:
            assert abs(trace.n_norm.mean()) <= 1e-12
        if f_e == Squash.SIGMOID and f_n == Squash.SIGMOID:
            assert np.all(trace.m >= 0.0)


def test_centering_can_open_the_gate_above_half():
    n = Tensor([[-0.1, -4.0], [-3.0, -5.0]])
    centered = normalize_difference(n, NormVariant.CENTER_N).data
    assert centered.mean() == pytest.approx(0.0, abs=1e-15)
    assert (1.0 / (1.0 + np.exp(-centered))).max() > 0.5


def test_centering_ignores_padded_entries():
    n = Tensor([[-1.0, -3.0, -100.0], [-2.0, -2.0, -100.0]])
    valid = np.array([[True, True, False], [True, True, False]])
    centered = normalize_difference(n, NormVariant.CENTER_N, valid).data
    np.testing.assert_allclose(centered[:, :2], [[1.0, -1.0], [0.0, 0.0]])


def test_two_sigmoid_doubles_the_gate():
    e, n = Tensor([[0.4]]), Tensor([[-0.3]])
    plain = compose(e, n, AttentionConfig()).item()
    doubled = compose(e, n, AttentionConfig(norm_variant=NormVariant.TWO_SIGMOID)).item()
    assert doubled == pytest.approx(2.0 * plain)


def test_attend_empty_sequence_gives_empty_output():
    a = Tensor(np.zeros((0, 3)))
    b = Tensor(np.ones((2, 3)))
    a_hat, b_hat, _ = attend(a, b, ProjectionSet.identity(), AttentionConfig())
    assert a_hat.shape == (0, 3)
    np.testing.assert_array_equal(b_hat.data, np.zeros((2, 3)))


def test_self_attention_reading_of_attend():
    rng = np.random.default_rng(8)
    a = Tensor(rng.normal(size=(4, 3)))
    _, _, trace = attend(a, a, ProjectionSet.identity(), AttentionConfig(), capture_trace=True)
    np.testing.assert_allclose(np.diag(trace.n_raw), 0.0)
    np.testing.assert_allclose(trace.n_raw, trace.n_raw.T)


def test_center_e_trace_holds_the_composed_affinity():
    rng = np.random.default_rng(10)
    a, b = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(3, 3)))
    config = AttentionConfig(norm_variant=NormVariant.CENTER_E)
    _, _, trace = attend(a, b, ProjectionSet.identity(), config, capture_trace=True)
    assert abs(trace.e_norm.mean()) <= 1e-12
    np.testing.assert_allclose(trace.e_norm, trace.e - trace.e.mean(), rtol=0, atol=1e-12)
    np.testing.assert_allclose(np.tanh(trace.e_norm) / (1.0 + np.exp(-trace.n_norm)), trace.m, rtol=0, atol=1e-12)


@pytest.mark.parametrize("norm", list(NormVariant))
def test_shared_projections_make_attend_symmetric(norm):
    rng = np.random.default_rng(14)
    a, b = Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(3, 5)))
    projections = ProjectionSet(w_e=Tensor(rng.normal(scale=0.5, size=(5, 4))))
    config = AttentionConfig(norm_variant=norm)
    _, b_hat, _ = attend(a, b, projections, config)
    a_hat_swapped, _, _ = attend(b, a, projections, config)
    np.testing.assert_allclose(b_hat.data, a_hat_swapped.data, rtol=0, atol=1e-12)


@pytest.mark.parametrize("norm", list(NormVariant))
def test_attend_is_permutation_equivariant(norm):
    rng = np.random.default_rng(15)
    a, b = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(3, 4)))
    projections = ProjectionSet(w_e=Tensor(rng.normal(scale=0.5, size=(4, 4))),
                                w_n=Tensor(rng.normal(scale=0.5, size=(4, 4))))
    config = AttentionConfig(norm_variant=norm)
    perm = rng.permutation(5)
    a_hat, b_hat, _ = attend(a, b, projections, config)
    a_hat_perm, b_hat_perm, _ = attend(Tensor(a.data[perm]), b, projections, config)
    np.testing.assert_allclose(a_hat_perm.data, a_hat.data[perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(b_hat_perm.data, b_hat.data, rtol=0, atol=1e-12)


@pytest.mark.parametrize("norm", list(NormVariant))
def test_combined_rows_are_not_normalized(norm):
    rng = np.random.default_rng(16)
    deviations = []
    for _ in range(20):
        a, b = Tensor(rng.normal(scale=2.0, size=(4, 6))), Tensor(rng.normal(scale=2.0, size=(5, 6)))
        _, _, trace = attend(a, b, ProjectionSet.identity(), AttentionConfig(norm_variant=norm), capture_trace=True)
        deviations.append(np.abs(trace.m.sum(axis=1) - 1.0).max())
    assert max(deviations) > 0.1


@pytest.mark.parametrize("f_n", list(Squash))
def test_gate_is_monotone_for_positive_affinity(f_n):
    rng = np.random.default_rng(17)
    config = AttentionConfig(f_n=f_n)
    e = Tensor(rng.uniform(0.1, 3.0, size=(4, 5)))
    n = rng.uniform(-5.0, -1.1, size=(4, 5))
    closer = n + rng.uniform(0.05, 1.0, size=(4, 5))
    assert np.all(compose(e, Tensor(closer), config).data > compose(e, Tensor(n), config).data)
    if f_n == Squash.SIGMOID:
        stronger = Tensor(e.data + rng.uniform(0.05, 1.0, size=(4, 5)))
        assert np.all(compose(stronger, Tensor(n), config).data > compose(e, Tensor(n), config).data)


def test_softmax_baseline_attend_rows_are_convex():
    rng = np.random.default_rng(9)
    a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(5, 4)))
    config = AttentionConfig(mode=AttentionMode.SOFTMAX_BASELINE)
    a_hat, b_hat, trace = attend(a, b, ProjectionSet.identity(), config, capture_trace=True)
    assert trace is None
    weights = softmax_rows(Tensor(a.data @ b.data.T / 2.0)).data
    np.testing.assert_allclose(a_hat.data, weights @ b.data)
    assert b_hat.shape == (5, 4)


def test_masked_key_columns_are_zeroed():
    rng = np.random.default_rng(2)
    q = Tensor(rng.normal(size=(3, 4)))
    mask = np.array([True, True, False])
    traces = {}
    config = AttentionConfig(num_heads=2, d_model=4)
    combined_attention_heads(q, q, q, ProjectionSet.identity(), config, mask, traces)
    assert set(traces) == {0, 1}
    for trace in traces.values():
        np.testing.assert_array_equal(trace.m[:, 2], 0.0)


def test_zero_combined_heads_equals_softmax_heads():
    rng = np.random.default_rng(4)
    q, k, v = (Tensor(rng.normal(size=(3, 6))) for _ in range(3))
    mixed = multi_head_attention(q, k, v, ProjectionSet.identity(), AttentionConfig(), 2, 0)
    plain = softmax_attention_heads(q, k, v, num_heads=2)
    np.testing.assert_array_equal(mixed.data, plain.data)


def test_mask_length_mismatch():
    q = Tensor(np.ones((3, 4)))
    with pytest.raises(TensorShapeError):
        combined_attention_heads(q, q, q, ProjectionSet.identity(), AttentionConfig(num_heads=1, d_model=4),
                                 np.array([True, False]))


@pytest.mark.parametrize("norm", list(NormVariant))
def test_attend_gradients_pass_finite_differences(norm):
    rng = np.random.default_rng(21)
    params = {
        "a": rng.normal(size=(3, 4)),
        "b": rng.normal(size=(4, 4)),
        "pair.w_e": rng.normal(scale=0.5, size=(4, 4)),
        "pair.w_n": rng.normal(scale=0.5, size=(4, 4)),
    }
    weights = rng.normal(size=(3, 4))
    config = AttentionConfig(norm_variant=norm)

    def f(graph):
        t = {name: graph.parameter(name, value) for name, value in params.items()}
        a_hat, b_hat, _ = attend(t["a"], t["b"], ProjectionSet(w_e=t["pair.w_e"], w_n=t["pair.w_n"]), config)
        return sum_all(mul(a_hat, Tensor(weights))) + mean_all(b_hat)

    report = finite_diff_check(f, params)
    assert report.passed(), report.to_dict()
