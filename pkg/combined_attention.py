#!/usr/bin/env python3
"""
🔀 Combined attention: dual affinity / difference matrices composed without softmax
M = f_E(E) ⊙ f_N(N), pooled as Â = M·B and B̂ = Mᵀ·A, plus the multi-head form
used inside the encoder and the scaled dot-product softmax baseline.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sentry_config import get_logger
from tensor_core import (
    Graph,
    Tensor,
    TensorShapeError,
    arctan,
    broadcast_scalar,
    concat_cols,
    glorot_normal,
    linear,
    matmul,
    mean_all,
    mul,
    pairwise_l1,
    scale,
    sigmoid,
    slice_cols,
    softmax_rows,
    sub,
    sum_all,
    tanh,
    transpose,
)

logger = get_logger(__name__)

# ============= Models =============

class Squash(str, Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"
    ARCTAN = "arctan"


class NormVariant(str, Enum):
    NONE = "none"
    CENTER_N = "center_n"
    CENTER_E = "center_e"
    TWO_SIGMOID = "two_sigmoid"


class AttentionMode(str, Enum):
    COMBINED = "combined"
    SOFTMAX_BASELINE = "softmax_baseline"


SQUASH_FUNCTIONS = {
    Squash.TANH: tanh,
    Squash.SIGMOID: sigmoid,
    Squash.ARCTAN: arctan,
}


class AttentionConfig(BaseModel):
    """Temperatures, composition pair and normalization of the combined attention"""
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(default=1.0, gt=0, description="Temperature of the affinity matrix E")
    beta: float = Field(default=1.0, gt=0, description="Temperature of the difference matrix N")
    f_e: Squash = Squash.TANH
    f_n: Squash = Squash.SIGMOID
    norm_variant: NormVariant = NormVariant.NONE
    share_projections: bool = True
    num_heads: Optional[int] = Field(default=None, gt=0, description="Inherited from the encoder when omitted")
    d_model: Optional[int] = Field(default=None, gt=0, description="Inherited from the encoder when omitted")
    mode: AttentionMode = AttentionMode.COMBINED

    @field_validator("f_e")
    @classmethod
    def validate_f_e(cls, v):
        if v == Squash.ARCTAN:
            raise ValueError("f_e must be tanh or sigmoid")
        return v

    @model_validator(mode="after")
    def validate_heads(self):
        if self.d_model is not None and self.num_heads is not None and self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        return self

    @property
    def d_k(self) -> Optional[int]:
        if self.d_model is None or self.num_heads is None:
            return None
        return self.d_model // self.num_heads

    @property
    def label(self) -> str:
        """Short name of the configuration, e.g. `center_n:tanh*sigmoid`"""
        if self.mode == AttentionMode.SOFTMAX_BASELINE:
            return "softmax_baseline"
        pair = f"{self.f_e.value}*{self.f_n.value}"
        if self.norm_variant == NormVariant.NONE:
            return pair
        return f"{self.norm_variant.value}:{pair}"


@dataclass
class CombinedAttentionTrace:
    """Matrices of one head (or one attend() call), kept for export and tests"""
    e: np.ndarray
    e_norm: np.ndarray
    n_raw: np.ndarray
    n_norm: np.ndarray
    m: np.ndarray

    def to_dict(self) -> Dict:
        return {
            "affinity": self.e.tolist(),
            "affinity_norm": self.e_norm.tolist(),
            "difference_raw": self.n_raw.tolist(),
            "difference": self.n_norm.tolist(),
            "combined": self.m.tolist(),
        }


@dataclass
class ProjectionSet:
    """Learnable maps: F_E / F_N for attend(), Q/K/V/output for the multi-head form.

    With shared projections `w_n` is None and F_N reuses `w_e`.
    """
    w_e: Optional[Tensor] = None
    w_n: Optional[Tensor] = None
    w_q: Optional[Tensor] = None
    b_q: Optional[Tensor] = None
    w_k: Optional[Tensor] = None
    b_k: Optional[Tensor] = None
    w_v: Optional[Tensor] = None
    b_v: Optional[Tensor] = None
    w_o: Optional[Tensor] = None
    b_o: Optional[Tensor] = None

    @property
    def shared(self) -> bool:
        return self.w_n is None or self.w_n is self.w_e

    def feature_maps(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """F_E(x), F_N(x); identity when no map is bound"""
        fe = x if self.w_e is None else matmul(x, self.w_e)
        if self.shared:
            return fe, fe
        return fe, matmul(x, self.w_n)

    def project_qkv(self, x: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        return (
            linear(x, self.w_q, self.b_q),
            linear(x, self.w_k, self.b_k),
            linear(x, self.w_v, self.b_v),
        )

    def project_output(self, x: Tensor) -> Tensor:
        if self.w_o is None:
            return x
        return linear(x, self.w_o, self.b_o)

    @classmethod
    def identity(cls) -> "ProjectionSet":
        return cls()

    @classmethod
    def bind(cls, graph: Graph, params: Dict[str, np.ndarray], prefix: str) -> "ProjectionSet":
        """Bind every `<prefix>.<field>` array present in `params`"""
        bound = {}
        for name in cls.__dataclass_fields__:
            key = f"{prefix}.{name}"
            if key in params:
                bound[name] = graph.parameter(key, params[key])
        return cls(**bound)


def init_pair_projections(rng: np.random.Generator, width: int, d_k: int, share: bool,
                          prefix: str = "pair") -> Dict[str, np.ndarray]:
    params = {f"{prefix}.w_e": glorot_normal(rng, width, d_k)}
    if not share:
        params[f"{prefix}.w_n"] = glorot_normal(rng, width, d_k)
    return params


def init_head_projections(rng: np.random.Generator, d_model: int, prefix: str) -> Dict[str, np.ndarray]:
    params = {}
    for name in ("q", "k", "v", "o"):
        params[f"{prefix}.w_{name}"] = glorot_normal(rng, d_model, d_model)
        params[f"{prefix}.b_{name}"] = np.zeros(d_model)
    return params


# ============= Dual affinity =============

def _require_same_width(op: str, a: Tensor, b: Tensor):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise TensorShapeError(f"{op}: widths differ {a.shape} vs {b.shape}")


def affinity_matrix(a: Tensor, b: Tensor, alpha: float = 1.0) -> Tensor:
    """E[i][j] = alpha × a_i · b_j"""
    _require_same_width("affinity_matrix", a, b)
    return scale(matmul(a, transpose(b)), alpha)


def difference_matrix(a: Tensor, b: Tensor, beta: float = 1.0) -> Tensor:
    """N[i][j] = −beta × ‖a_i − b_j‖₁ (nonpositive)"""
    _require_same_width("difference_matrix", a, b)
    return scale(pairwise_l1(a, b), -beta)


def _center(x: Tensor, valid: Optional[np.ndarray]) -> Tensor:
    """x − mean(x); with `valid`, the mean runs over valid entries only"""
    if x.size == 0:
        return x
    if valid is None or valid.all():
        mean = mean_all(x)
    else:
        count = int(valid.sum())
        if count == 0:
            return x
        mean = scale(sum_all(mul(x, Tensor(valid.astype(np.float64)))), 1.0 / count)
    return sub(x, broadcast_scalar(mean, x.shape))


def normalize_difference(n: Tensor, variant: NormVariant, valid: Optional[np.ndarray] = None) -> Tensor:
    """center_n subtracts the mean; two_sigmoid and none leave N untouched
    (the 2× factor of two_sigmoid is applied in compose)."""
    if NormVariant(variant) == NormVariant.CENTER_N:
        return _center(n, valid)
    return n


def normalize_affinity(e: Tensor, variant: NormVariant, valid: Optional[np.ndarray] = None) -> Tensor:
    """center_e subtracts the mean of E; every other variant leaves E untouched"""
    if NormVariant(variant) == NormVariant.CENTER_E:
        return _center(e, valid)
    return e


def _gated(e_norm: Tensor, n_norm: Tensor, config: AttentionConfig) -> Tensor:
    gate = SQUASH_FUNCTIONS[config.f_n](n_norm)
    if config.norm_variant == NormVariant.TWO_SIGMOID:
        gate = scale(gate, 2.0)
    return mul(SQUASH_FUNCTIONS[config.f_e](e_norm), gate)


def compose(e: Tensor, n: Tensor, config: AttentionConfig, valid: Optional[np.ndarray] = None) -> Tensor:
    """M = f_E(e) ⊙ g(f_N(n)); g doubles the gate for two_sigmoid, center_e centers `e` first"""
    if e.shape != n.shape:
        raise TensorShapeError(f"compose: E {e.shape} and N {n.shape} differ")
    return _gated(normalize_affinity(e, config.norm_variant, valid), n, config)


@dataclass
class _MatrixSet:
    e: Tensor
    e_norm: Tensor
    n_raw: Tensor
    n_norm: Tensor

    def trace(self, m: Tensor) -> CombinedAttentionTrace:
        return CombinedAttentionTrace(e=self.e.numpy(), e_norm=self.e_norm.numpy(), n_raw=self.n_raw.numpy(),
                                      n_norm=self.n_norm.numpy(), m=m.numpy())


def _combined_matrix(fa_e: Tensor, fb_e: Tensor, fa_n: Tensor, fb_n: Tensor,
                     config: AttentionConfig, valid: Optional[np.ndarray]) -> Tuple[Tensor, _MatrixSet]:
    """M with both temperatures divided by √d_k, plus the matrices that produced it"""
    d_k = fa_e.shape[1]
    temperature = 1.0 / math.sqrt(d_k) if d_k else 1.0
    e = affinity_matrix(fa_e, fb_e, config.alpha * temperature)
    n_raw = difference_matrix(fa_n, fb_n, config.beta * temperature)
    e_norm = normalize_affinity(e, config.norm_variant, valid)
    n_norm = normalize_difference(n_raw, config.norm_variant, valid)
    m = _gated(e_norm, n_norm, config)
    return m, _MatrixSet(e, e_norm, n_raw, n_norm)


# ============= Cross-attention pooling =============

def attend(a: Tensor, b: Tensor, projections: ProjectionSet, config: AttentionConfig,
           capture_trace: bool = False) -> Tuple[Tensor, Tensor, Optional[CombinedAttentionTrace]]:
    """Align A against B and B against A: Â = M·B, B̂ = Mᵀ·A.

    attend(a, a) is the single-sequence (self-attention) reading.
    In softmax_baseline mode M is replaced by row softmax of E for Â and of Eᵀ for B̂.
    """
    _require_same_width("attend", a, b)
    fa_e, fa_n = projections.feature_maps(a)
    fb_e, fb_n = projections.feature_maps(b)

    if config.mode == AttentionMode.SOFTMAX_BASELINE:
        d_k = fa_e.shape[1]
        e = affinity_matrix(fa_e, fb_e, 1.0 / math.sqrt(d_k) if d_k else 1.0)
        a_hat = matmul(softmax_rows(e), b)
        b_hat = matmul(softmax_rows(transpose(e)), a)
        return a_hat, b_hat, None

    m, matrices = _combined_matrix(fa_e, fb_e, fa_n, fb_n, config, None)
    a_hat = matmul(m, b)
    b_hat = matmul(transpose(m), a)
    return a_hat, b_hat, matrices.trace(m) if capture_trace else None


# ============= Multi-head forms =============

def _key_mask(mask, keys: int) -> Optional[np.ndarray]:
    if mask is None:
        return None
    valid = np.asarray(mask, dtype=bool)
    if valid.shape != (keys,):
        raise TensorShapeError(f"mask length {valid.shape[0] if valid.ndim else 0} does not match {keys} keys")
    return valid


def combined_head(q_h: Tensor, k_h: Tensor, v_h: Tensor, config: AttentionConfig,
                  mask: Optional[np.ndarray] = None, query_mask: Optional[np.ndarray] = None,
                  capture_trace: bool = False) -> Tuple[Tensor, Optional[CombinedAttentionTrace]]:
    """One head of tanh(QKᵀ/√d_k) ⊙ sigmoid(G(Q,K)/√d_k) · V; masked key columns of M are zeroed"""
    valid = None
    if mask is not None:
        rows = query_mask if query_mask is not None else np.ones(q_h.shape[0], dtype=bool)
        valid = np.outer(rows, mask)
    m, matrices = _combined_matrix(q_h, k_h, q_h, k_h, config, valid)
    if mask is not None:
        m = mul(m, Tensor(np.tile(mask.astype(np.float64), (q_h.shape[0], 1))))
    trace = matrices.trace(m) if capture_trace else None
    return matmul(m, v_h), trace


def softmax_head(q_h: Tensor, k_h: Tensor, v_h: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    d_k = q_h.shape[1]
    scores = scale(matmul(q_h, transpose(k_h)), 1.0 / math.sqrt(d_k) if d_k else 1.0)
    return matmul(softmax_rows(scores, mask), v_h)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, projections: ProjectionSet,
                         config: AttentionConfig, num_heads: int, combined_heads: int,
                         mask=None, traces: Optional[Dict[int, CombinedAttentionTrace]] = None) -> Tensor:
    """Heads [0, combined_heads) run combined attention, the rest softmax; concatenated
    before the output projection. `traces`, when given, receives one entry per combined head."""
    for name, t in (("q", q), ("k", k), ("v", v)):
        if t.data.ndim != 2:
            raise TensorShapeError(f"multi_head_attention: {name} must be a matrix, got {t.shape}")
    if k.shape != v.shape or q.shape[1] != k.shape[1]:
        raise TensorShapeError(f"multi_head_attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    width = q.shape[1]
    if num_heads <= 0 or width % num_heads:
        raise TensorShapeError(f"multi_head_attention: width {width} not divisible into {num_heads} heads")
    if not 0 <= combined_heads <= num_heads:
        raise TensorShapeError(f"multi_head_attention: {combined_heads} combined heads of {num_heads}")

    valid = _key_mask(mask, k.shape[0])
    query_valid = valid if valid is not None and q.shape[0] == k.shape[0] else None
    d_k = width // num_heads

    outputs = []
    for head in range(num_heads):
        lo, hi = head * d_k, (head + 1) * d_k
        q_h, k_h, v_h = slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
        if head < combined_heads:
            out, trace = combined_head(q_h, k_h, v_h, config, valid, query_valid, traces is not None)
            if traces is not None:
                traces[head] = trace
        else:
            out = softmax_head(q_h, k_h, v_h, valid)
        outputs.append(out)

    merged = outputs[0] if num_heads == 1 else concat_cols(outputs)
    return projections.project_output(merged)


def combined_attention_heads(q: Tensor, k: Tensor, v: Tensor, projections: ProjectionSet,
                             config: AttentionConfig, mask=None,
                             traces: Optional[Dict[int, CombinedAttentionTrace]] = None) -> Tensor:
    num_heads = config.num_heads or 1
    return multi_head_attention(q, k, v, projections, config, num_heads, num_heads, mask, traces)


def softmax_attention_heads(q: Tensor, k: Tensor, v: Tensor, mask=None, *, num_heads: int = 1,
                            projections: Optional[ProjectionSet] = None) -> Tensor:
    return multi_head_attention(
        q, k, v, projections or ProjectionSet.identity(), AttentionConfig(), num_heads, 0, mask
    )
