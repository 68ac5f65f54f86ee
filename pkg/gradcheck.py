#!/usr/bin/env python3
"""
🔬 Gradient suite: finite-difference checks of every op, the attention forms and a tiny model
"""
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from combined_attention import AttentionConfig, ProjectionSet, attend, combined_attention_heads, multi_head_attention
from encoder import EncoderConfig
from matcher import EncodingMode, MatcherConfig, PairExample, PairMatcher
from run_config import RunConfig
from sentry_config import get_logger, track_gradcheck
from synthetic_data import Vocabulary, generate_example
from tensor_core import (
    Graph,
    Tensor,
    abs_,
    add,
    add_bias,
    arctan,
    broadcast_scalar,
    concat_cols,
    cross_entropy,
    finite_diff_check,
    layer_norm,
    linear,
    make_rng,
    matmul,
    mean_all,
    mul,
    pairwise_l1,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_cols,
    slice_rows,
    softmax_rows,
    sub,
    sum_all,
    take_rows,
    tanh,
    transpose,
)

logger = get_logger(__name__)

DEFAULT_TOLERANCE = 1e-4
MODEL_COORDS = 12

Inputs = Dict[str, Tensor]

# name → (input shapes, forward over bound inputs)
OP_CASES: Dict[str, Tuple[Dict[str, Tuple[int, ...]], Callable[[Inputs], Tensor]]] = {
    "matmul": ({"x": (3, 4), "y": (4, 2)}, lambda t: matmul(t["x"], t["y"])),
    "transpose": ({"x": (3, 4)}, lambda t: transpose(t["x"])),
    "add_bias": ({"x": (3, 4), "b": (4,)}, lambda t: add_bias(t["x"], t["b"])),
    "linear": ({"x": (3, 4), "w": (4, 2), "b": (2,)}, lambda t: linear(t["x"], t["w"], t["b"])),
    "add": ({"x": (3, 4), "y": (3, 4)}, lambda t: add(t["x"], t["y"])),
    "sub": ({"x": (3, 4), "y": (3, 4)}, lambda t: sub(t["x"], t["y"])),
    "mul": ({"x": (3, 4), "y": (3, 4)}, lambda t: mul(t["x"], t["y"])),
    "scale": ({"x": (3, 4)}, lambda t: scale(t["x"], -1.7)),
    "tanh": ({"x": (3, 4)}, lambda t: tanh(t["x"])),
    "sigmoid": ({"x": (3, 4)}, lambda t: sigmoid(t["x"])),
    "arctan": ({"x": (3, 4)}, lambda t: arctan(t["x"])),
    "relu": ({"x": (3, 4)}, lambda t: relu(t["x"])),
    "abs": ({"x": (3, 4)}, lambda t: abs_(t["x"])),
    "pairwise_l1": ({"x": (3, 4), "y": (2, 4)}, lambda t: pairwise_l1(t["x"], t["y"])),
    "mean_all": ({"x": (3, 4)}, lambda t: mean_all(t["x"])),
    "sum_all": ({"x": (3, 4)}, lambda t: sum_all(t["x"])),
    "broadcast_scalar": ({"s": (1,)}, lambda t: broadcast_scalar(t["s"], (3, 2))),
    "reshape": ({"x": (3, 4)}, lambda t: reshape(t["x"], (2, 6))),
    "concat_cols": ({"x": (3, 2), "y": (3, 3)}, lambda t: concat_cols([t["x"], t["y"]])),
    "slice_cols": ({"x": (3, 5)}, lambda t: slice_cols(t["x"], 1, 4)),
    "slice_rows": ({"x": (4, 3)}, lambda t: slice_rows(t["x"], 1, 3)),
    "take_rows": ({"table": (6, 3)}, lambda t: take_rows(t["table"], [0, 2, 2, 5])),
    "softmax_rows": ({"x": (3, 4)}, lambda t: softmax_rows(t["x"])),
    "softmax_rows_masked": (
        {"x": (3, 4)}, lambda t: softmax_rows(t["x"], np.array([True, False, True, True]))
    ),
    "layer_norm": ({"x": (3, 4), "gain": (4,), "bias": (4,)}, lambda t: layer_norm(t["x"], t["gain"], t["bias"])),
    "cross_entropy": ({"logits": (3,)}, lambda t: cross_entropy(t["logits"], 1)),
}


class ComponentResult(BaseModel):
    max_relative_error: float
    checked: int
    excluded: int
    passed: bool


class GradientSuiteReport(BaseModel):
    tolerance: float = DEFAULT_TOLERANCE
    components: Dict[str, ComponentResult] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.components) and all(c.passed for c in self.components.values())

    @property
    def max_relative_error(self) -> float:
        return max((c.max_relative_error for c in self.components.values()), default=0.0)

    def failures(self) -> List[str]:
        return [name for name, c in self.components.items() if not c.passed]


def _weighted_scalar(outputs: List[Tensor], weights: List[np.ndarray]) -> Tensor:
    """Σ_i sum(out_i ⊙ w_i): a scalar whose gradient reaches every output entry"""
    total = None
    for out, w in zip(outputs, weights):
        term = sum_all(mul(out, Tensor(w)))
        total = term if total is None else add(total, term)
    return total


def _bind(graph: Graph, params: Dict[str, np.ndarray]) -> Inputs:
    return {name: graph.parameter(name, value) for name, value in params.items()}


def _probe(forward: Callable[[Inputs], List[Tensor]], params: Dict[str, np.ndarray],
           rng: np.random.Generator) -> Callable[[Graph], Tensor]:
    """Wrap a multi-output forward into f(graph) with fixed random output weights"""
    shapes = [out.shape for out in forward({k: Tensor(v) for k, v in params.items()})]
    weights = [rng.normal(size=shape) for shape in shapes]
    return lambda graph: _weighted_scalar(forward(_bind(graph, params)), weights)


def op_components(rng: np.random.Generator) -> Dict[str, Tuple[Callable[[Graph], Tensor], Dict[str, np.ndarray]]]:
    components = {}
    for name, (shapes, forward) in OP_CASES.items():
        params = {k: rng.normal(size=shape) for k, shape in shapes.items()}
        components[f"op.{name}"] = (_probe(lambda t, fwd=forward: [fwd(t)], params, rng), params)
    return components


def attention_components(attention: AttentionConfig, rng: np.random.Generator):
    width, heads = 8, 2
    config = attention.model_copy(update={"d_model": width, "num_heads": heads})
    components = {}

    for shared in (False, True):
        params = {"a": rng.normal(size=(4, width)), "b": rng.normal(size=(5, width)),
                  "pair.w_e": rng.normal(scale=0.4, size=(width, width))}
        if not shared:
            params["pair.w_n"] = rng.normal(scale=0.4, size=(width, width))

        def forward(t: Inputs) -> List[Tensor]:
            projections = ProjectionSet(w_e=t["pair.w_e"], w_n=t.get("pair.w_n"))
            a_hat, b_hat, _ = attend(t["a"], t["b"], projections, config)
            return [a_hat, b_hat]

        components["attend.shared" if shared else "attend"] = (_probe(forward, params, rng), params)

    params = {"q": rng.normal(size=(4, width)), "k": rng.normal(size=(4, width)),
              "v": rng.normal(size=(4, width)), "w_o": rng.normal(scale=0.4, size=(width, width)),
              "b_o": rng.normal(size=(width,))}
    mask = np.array([True, True, True, False])

    def heads_forward(t: Inputs) -> List[Tensor]:
        projections = ProjectionSet(w_o=t["w_o"], b_o=t["b_o"])
        return [combined_attention_heads(t["q"], t["k"], t["v"], projections, config, mask)]

    def mixed_forward(t: Inputs) -> List[Tensor]:
        projections = ProjectionSet(w_o=t["w_o"], b_o=t["b_o"])
        return [multi_head_attention(t["q"], t["k"], t["v"], projections, config, heads, 1, mask)]

    components["combined_attention_heads"] = (_probe(heads_forward, params, rng), params)
    mixed_params = {k: v.copy() for k, v in params.items()}
    components["mixed_heads"] = (_probe(mixed_forward, mixed_params, rng), mixed_params)
    return components


def tiny_model(base: RunConfig, mode: EncodingMode, seed: int) -> Tuple[PairMatcher, PairExample]:
    """2 layers, d_model 8, 2 heads over the base vocabulary and attention settings"""
    attention = base.encoder.attention.model_copy(update={"d_model": None, "num_heads": None})
    encoder = EncoderConfig(
        num_layers=2, d_model=8, num_heads=2, d_ff=16,
        replacement_schedule=base.encoder.replacement_schedule,
        attention=attention.model_copy(update={"share_projections": mode == EncodingMode.CROSS}),
        max_seq_len=base.encoder.max_seq_len,
        vocab_size=base.encoder.vocab_size,
    )
    matcher = MatcherConfig(mode=mode, pooling=base.matcher.pooling, num_classes=base.matcher.num_classes)
    model = PairMatcher.initialize(encoder, matcher, seed)
    pair = generate_example(base.synthetic, Vocabulary.from_spec(base.synthetic), seed)
    return model, pair


def model_components(base: RunConfig, seed: int):
    components = {}
    for mode in EncodingMode:
        model, pair = tiny_model(base, mode, seed)

        def loss(graph: Graph, model=model, pair=pair) -> Tensor:
            return model.loss(graph, pair)

        components[f"model.{mode.value}"] = (loss, model.params)
    return components


def run_gradient_suite(config: Optional[RunConfig] = None, seed: int = 0,
                       tolerance: float = DEFAULT_TOLERANCE,
                       only: Optional[List[str]] = None) -> GradientSuiteReport:
    config = config or RunConfig()
    rng = make_rng(seed)
    components = {}
    components.update(op_components(rng))
    components.update(attention_components(config.encoder.attention, rng))
    components.update(model_components(config, seed))

    report = GradientSuiteReport(tolerance=tolerance)
    for name, (f, params) in components.items():
        if only and not any(name.startswith(prefix) for prefix in only):
            continue
        with track_gradcheck(name):
            is_model = name.startswith("model.")
            result = finite_diff_check(
                f, params, rng=make_rng(seed), max_coords=MODEL_COORDS if is_model else None,
            )
        report.components[name] = ComponentResult(
            max_relative_error=result.max_relative_error,
            checked=result.checked,
            excluded=len(result.excluded),
            passed=result.passed(tolerance),
        )
        status = "✅" if report.components[name].passed else "❌"
        logger.info(f"{status} {name}: max relative error {result.max_relative_error:.2e} over {result.checked} coords")
    return report
