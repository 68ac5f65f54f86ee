#!/usr/bin/env python3
"""
🏗️ Transformer encoder with mixed combined/softmax attention heads
Post-norm blocks; layer i routes round(fraction_i × heads) heads through combined attention.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from combined_attention import (
    AttentionConfig,
    AttentionMode,
    CombinedAttentionTrace,
    ProjectionSet,
    init_head_projections,
    multi_head_attention,
)
from sentry_config import get_logger
from tensor_core import (
    DomainError,
    Graph,
    Tensor,
    add,
    glorot_normal,
    layer_norm,
    linear,
    relu,
    take_rows,
)

logger = get_logger(__name__)

DEFAULT_SCHEDULE = [0.5, 0.4, 0.3]

# ============= Models =============

class EncoderConfig(BaseModel):
    """Encoder shape and the per-layer head-replacement schedule"""
    model_config = ConfigDict(extra="forbid")

    num_layers: int = Field(default=4, ge=0)
    d_model: int = Field(default=64, gt=0)
    d_ff: Optional[int] = Field(default=None, gt=0, description="Defaults to 4 × d_model")
    num_heads: int = Field(default=4, gt=0)
    replacement_schedule: List[float] = Field(
        default_factory=lambda: list(DEFAULT_SCHEDULE),
        description="Fraction of heads using combined attention, layer 0 first; missing layers are 0.0",
    )
    attention: AttentionConfig = Field(default_factory=AttentionConfig)
    max_seq_len: int = Field(default=64, gt=0)
    vocab_size: Optional[int] = Field(default=None, gt=0, description="Filled from the synthetic vocabulary")
    num_segments: int = Field(default=2, gt=0)

    @field_validator("replacement_schedule")
    @classmethod
    def validate_schedule(cls, v):
        for fraction in v:
            if not 0.0 <= fraction <= 1.0:
                raise ValueError(f"replacement fraction {fraction} outside [0, 1]")
        return v

    @model_validator(mode="after")
    def validate_shapes(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model

        for name in ("d_model", "num_heads"):
            given = getattr(self.attention, name)
            if given is not None and given != getattr(self, name):
                raise ValueError(f"attention.{name}={given} disagrees with encoder {name}={getattr(self, name)}")
        self.attention = self.attention.model_copy(
            update={"d_model": self.d_model, "num_heads": self.num_heads}
        )
        return self

    @property
    def d_k(self) -> int:
        return self.d_model // self.num_heads

    def fraction(self, layer_index: int) -> float:
        if layer_index < len(self.replacement_schedule):
            return self.replacement_schedule[layer_index]
        return 0.0

    def replaced_heads(self, layer_index: int) -> int:
        """Heads routed through combined attention in this layer (round half up, clamped)"""
        if self.attention.mode == AttentionMode.SOFTMAX_BASELINE:
            return 0
        count = math.floor(self.fraction(layer_index) * self.num_heads + 0.5)
        return max(0, min(self.num_heads, count))


@dataclass
class EncoderBlockState:
    """Parameters of one block bound onto a graph"""
    attention: ProjectionSet
    w_1: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor
    ln_1_gain: Tensor
    ln_1_bias: Tensor
    ln_2_gain: Tensor
    ln_2_bias: Tensor

    @classmethod
    def bind(cls, graph: Graph, params: Dict[str, np.ndarray], layer_index: int) -> "EncoderBlockState":
        prefix = f"layers.{layer_index}"

        def get(name: str) -> Tensor:
            key = f"{prefix}.{name}"
            return graph.parameter(key, params[key])

        return cls(
            attention=ProjectionSet.bind(graph, params, f"{prefix}.attn"),
            w_1=get("ffn.w_1"),
            b_1=get("ffn.b_1"),
            w_2=get("ffn.w_2"),
            b_2=get("ffn.b_2"),
            ln_1_gain=get("ln_1.gain"),
            ln_1_bias=get("ln_1.bias"),
            ln_2_gain=get("ln_2.gain"),
            ln_2_bias=get("ln_2.bias"),
        )


# ============= Parameters =============

def init_encoder_params(config: EncoderConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    if config.vocab_size is None:
        raise DomainError("encoder vocab_size is not set")

    params: Dict[str, np.ndarray] = {
        "embed.tokens": rng.normal(0.0, 1.0, size=(config.vocab_size, config.d_model)),
        "embed.segments": rng.normal(0.0, 0.02, size=(config.num_segments, config.d_model)),
    }
    for i in range(config.num_layers):
        prefix = f"layers.{i}"
        params.update(init_head_projections(rng, config.d_model, f"{prefix}.attn"))
        params[f"{prefix}.ffn.w_1"] = glorot_normal(rng, config.d_model, config.d_ff)
        params[f"{prefix}.ffn.b_1"] = np.zeros(config.d_ff)
        params[f"{prefix}.ffn.w_2"] = glorot_normal(rng, config.d_ff, config.d_model)
        params[f"{prefix}.ffn.b_2"] = np.zeros(config.d_model)
        for norm in ("ln_1", "ln_2"):
            params[f"{prefix}.{norm}.gain"] = np.ones(config.d_model)
            params[f"{prefix}.{norm}.bias"] = np.zeros(config.d_model)
    return params


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same)"""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: d_model // 2])
    return table


# ============= Forward =============

def embed(tokens: Sequence[int], config: EncoderConfig, graph: Graph, params: Dict[str, np.ndarray],
          segments: Optional[Sequence[int]] = None) -> Tensor:
    """Learned token embedding + fixed sinusoidal position (+ segment embedding when given)"""
    tokens = list(tokens)
    if len(tokens) > config.max_seq_len:
        raise DomainError(f"sequence of {len(tokens)} tokens exceeds max_seq_len {config.max_seq_len}")
    table = graph.parameter("embed.tokens", params["embed.tokens"])
    x = add(take_rows(table, tokens), Tensor(positional_encoding(len(tokens), config.d_model)))
    if segments is not None:
        segment_table = graph.parameter("embed.segments", params["embed.segments"])
        x = add(x, take_rows(segment_table, list(segments)))
    return x


def encoder_block(x: Tensor, state: EncoderBlockState, mask, layer_index: int, config: EncoderConfig,
                  traces: Optional[Dict[int, CombinedAttentionTrace]] = None) -> Tensor:
    """x' = LN(x + MixedAttn(x)); out = LN(x' + FFN(x'))"""
    q, k, v = state.attention.project_qkv(x)
    attended = multi_head_attention(
        q, k, v,
        state.attention,
        config.attention,
        config.num_heads,
        config.replaced_heads(layer_index),
        mask,
        traces,
    )
    hidden = layer_norm(add(x, attended), state.ln_1_gain, state.ln_1_bias)
    ffn = linear(relu(linear(hidden, state.w_1, state.b_1)), state.w_2, state.b_2)
    return layer_norm(add(hidden, ffn), state.ln_2_gain, state.ln_2_bias)


def encode(tokens: Sequence[int], mask, config: EncoderConfig, params: Dict[str, np.ndarray], graph: Graph,
           segments: Optional[Sequence[int]] = None,
           traces: Optional[Dict[int, Dict[int, CombinedAttentionTrace]]] = None) -> Tensor:
    """Embed, then apply num_layers blocks. `traces[layer][head]` collects combined-head matrices."""
    x = embed(tokens, config, graph, params, segments)
    for layer_index in range(config.num_layers):
        state = EncoderBlockState.bind(graph, params, layer_index)
        layer_traces = None
        if traces is not None:
            layer_traces = traces.setdefault(layer_index, {})
        x = encoder_block(x, state, mask, layer_index, config, layer_traces)
    return x
