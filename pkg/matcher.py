#!/usr/bin/env python3
"""
🧩 Sentence-pair matcher over the mixed-attention encoder
Cross mode encodes [CLS] Q [SEP] P jointly; siamese mode encodes Q and P
separately and aligns them with attend() before a linear head.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from combined_attention import (
    AttentionConfig,
    CombinedAttentionTrace,
    ProjectionSet,
    attend,
    init_pair_projections,
)
from encoder import EncoderConfig, encode, init_encoder_params
from sentry_config import get_logger
from tensor_core import (
    DomainError,
    Graph,
    Tensor,
    abs_,
    add,
    concat_cols,
    cross_entropy,
    glorot_normal,
    linear,
    make_rng,
    matmul,
    mul,
    reshape,
    slice_rows,
    softmax_vector,
    sub,
)

logger = get_logger(__name__)

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]")


class PairInputError(ValueError):
    """A pair the matcher cannot encode (empty side, over-long input)"""
    pass


# ============= Models =============

class PerturbationTag(str, Enum):
    NONE = "none"
    SWAP_NUM = "swap_num"
    SWAP_ANT = "swap_ant"
    OVERLAP_HIGH = "overlap_high"


class EncodingMode(str, Enum):
    CROSS = "cross"
    SIAMESE = "siamese"


class Pooling(str, Enum):
    CLS = "cls"
    MEAN = "mean"


class PairExample(BaseModel):
    """One (Q, P, y) triple; serialized with the short keys q / p / label / tag"""
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    tokens_q: List[int] = Field(alias="q")
    tokens_p: List[int] = Field(alias="p")
    label: int = Field(ge=0, le=2)
    perturbation_tag: PerturbationTag = Field(default=PerturbationTag.NONE, alias="tag")

    def to_record(self) -> Dict:
        return self.model_dump(by_alias=True, mode="json")


class MatcherConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: EncodingMode = EncodingMode.CROSS
    pooling: Pooling = Pooling.MEAN
    num_classes: int = Field(default=2, ge=2, le=3)
    symmetric: bool = Field(default=False, description="Siamese only: order-symmetric pooled features")
    pad_to: Optional[int] = Field(default=None, gt=0, description="Cross only: pad inputs with [PAD] to this length")

    @model_validator(mode="after")
    def validate_mode(self):
        if self.symmetric and self.mode != EncodingMode.SIAMESE:
            raise ValueError("symmetric pooling applies to siamese mode only")
        return self

    @property
    def match_label(self) -> int:
        """Class read as "the pair matches": 1 for paraphrase, 0 (entailment) for NLI"""
        return 1 if self.num_classes == 2 else 0


class TagMetrics(BaseModel):
    count: int
    correct: int
    accuracy: float


class EvaluationReport(BaseModel):
    accuracy: float
    total: int
    correct: int
    per_tag: Dict[str, TagMetrics]
    confusion: List[List[int]] = Field(description="rows: true label, columns: predicted label")


@dataclass
class PairTrace:
    """Attention matrices recorded while classifying one pair"""
    tokens: List[int]
    q_positions: Tuple[int, int]
    p_positions: Tuple[int, int]
    layers: Dict[int, Dict[int, CombinedAttentionTrace]] = field(default_factory=dict)
    pair: Optional[CombinedAttentionTrace] = None


# ============= Model =============

class PairMatcher:
    """Encoder parameters + matcher head; parameters live in a flat path → array dict"""

    def __init__(self, encoder_config: EncoderConfig, matcher_config: MatcherConfig,
                 params: Dict[str, np.ndarray]):
        self.encoder_config = encoder_config
        self.matcher_config = matcher_config
        self.params = params

    @classmethod
    def initialize(cls, encoder_config: EncoderConfig, matcher_config: MatcherConfig,
                   seed: int) -> "PairMatcher":
        rng = make_rng(seed)
        params = init_encoder_params(encoder_config, rng)
        if matcher_config.mode == EncodingMode.SIAMESE:
            params.update(init_pair_projections(
                rng, encoder_config.d_model, encoder_config.d_model,
                encoder_config.attention.share_projections,
            ))
        width = cls.feature_width(encoder_config, matcher_config)
        params["head.w"] = glorot_normal(rng, width, matcher_config.num_classes)
        params["head.b"] = np.zeros(matcher_config.num_classes)
        logger.debug(f"Initialized {matcher_config.mode.value} matcher with {len(params)} parameter arrays")
        return cls(encoder_config, matcher_config, params)

    @staticmethod
    def feature_width(encoder_config: EncoderConfig, matcher_config: MatcherConfig) -> int:
        d = encoder_config.d_model
        if matcher_config.mode == EncodingMode.CROSS:
            return d
        return 3 * d if matcher_config.symmetric else 4 * d

    @property
    def attention_config(self) -> AttentionConfig:
        return self.encoder_config.attention

    def copy(self) -> "PairMatcher":
        return PairMatcher(
            self.encoder_config,
            self.matcher_config,
            {name: value.copy() for name, value in self.params.items()},
        )

    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.params.values()))

    # ----- inputs -----

    def cross_inputs(self, pair: PairExample) -> Tuple[List[int], List[int], Optional[np.ndarray]]:
        """[CLS] Q [SEP] P with segment ids and (when padding) a validity mask"""
        _require_non_empty(pair)
        tokens = [CLS_ID] + list(pair.tokens_q) + [SEP_ID] + list(pair.tokens_p)
        segments = [0] * (len(pair.tokens_q) + 2) + [1] * len(pair.tokens_p)
        pad_to = self.matcher_config.pad_to
        if pad_to is None:
            return tokens, segments, None
        if len(tokens) > pad_to:
            raise PairInputError(f"pair of {len(tokens)} tokens exceeds pad_to {pad_to}")
        padding = pad_to - len(tokens)
        mask = np.array([True] * len(tokens) + [False] * padding)
        return tokens + [PAD_ID] * padding, segments + [0] * padding, mask

    def _side_tokens(self, tokens: Sequence[int]) -> List[int]:
        if self.matcher_config.pooling == Pooling.CLS:
            return [CLS_ID] + list(tokens)
        return list(tokens)

    # ----- forward -----

    def _pool(self, h: Tensor, mask: Optional[np.ndarray]) -> Tensor:
        if self.matcher_config.pooling == Pooling.CLS:
            return slice_rows(h, 0, 1)
        valid = np.ones(h.shape[0], dtype=bool) if mask is None else mask
        weights = valid.astype(np.float64) / max(int(valid.sum()), 1)
        return matmul(Tensor(weights[None, :]), h)

    def _head(self, graph: Graph, features: Tensor) -> Tensor:
        w = graph.parameter("head.w", self.params["head.w"])
        b = graph.parameter("head.b", self.params["head.b"])
        return reshape(linear(features, w, b), (self.matcher_config.num_classes,))

    def logits(self, graph: Graph, pair: PairExample, trace: Optional[PairTrace] = None) -> Tensor:
        """Raw class scores [num_classes] built on `graph`"""
        return self._head(graph, self.features(graph, pair, trace))

    def features(self, graph: Graph, pair: PairExample, trace: Optional[PairTrace] = None) -> Tensor:
        """Pooled [1×F] input of the linear head.

        Siamese layout: [ā, b̄, |ā−b̄|, ā⊙b̄], or [ā+b̄, |ā−b̄|, ā⊙b̄] when symmetric.
        """
        if self.matcher_config.mode == EncodingMode.CROSS:
            tokens, segments, mask = self.cross_inputs(pair)
            layers = trace.layers if trace is not None else None
            h = encode(tokens, mask, self.encoder_config, self.params, graph, segments, layers)
            return self._pool(h, mask)

        _require_non_empty(pair)
        h_q = encode(self._side_tokens(pair.tokens_q), None, self.encoder_config, self.params, graph)
        h_p = encode(self._side_tokens(pair.tokens_p), None, self.encoder_config, self.params, graph)
        projections = ProjectionSet.bind(graph, self.params, "pair")
        a_hat, b_hat, pair_trace = attend(h_q, h_p, projections, self.attention_config, trace is not None)
        if trace is not None:
            trace.pair = pair_trace

        a_bar = self._pool(a_hat, None)
        b_bar = self._pool(b_hat, None)
        gap = abs_(sub(a_bar, b_bar))
        product = mul(a_bar, b_bar)
        if self.matcher_config.symmetric:
            return concat_cols([add(a_bar, b_bar), gap, product])
        return concat_cols([a_bar, b_bar, gap, product])

    def loss(self, graph: Graph, pair: PairExample) -> Tensor:
        return cross_entropy(self.logits(graph, pair), pair.label)

    def probabilities(self, pair: PairExample) -> np.ndarray:
        return softmax_vector(self.logits(Graph(), pair).numpy())

    def predict(self, pair: PairExample) -> int:
        return int(np.argmax(self.logits(Graph(), pair).data))

    def trace(self, pair: PairExample) -> PairTrace:
        """Classify once and keep every combined-attention matrix produced on the way"""
        _require_non_empty(pair)
        n_q, n_p = len(pair.tokens_q), len(pair.tokens_p)
        if self.matcher_config.mode == EncodingMode.CROSS:
            tokens, _, _ = self.cross_inputs(pair)
            recorded = PairTrace(tokens=tokens, q_positions=(1, 1 + n_q), p_positions=(2 + n_q, 2 + n_q + n_p))
        else:
            offset = 1 if self.matcher_config.pooling == Pooling.CLS else 0
            recorded = PairTrace(
                tokens=list(pair.tokens_q) + list(pair.tokens_p),
                q_positions=(offset, offset + n_q),
                p_positions=(offset, offset + n_p),
            )
        self.logits(Graph(), pair, recorded)
        return recorded


def _require_non_empty(pair: PairExample):
    if not pair.tokens_q or not pair.tokens_p:
        side = "q" if not pair.tokens_q else "p"
        raise PairInputError(f"pair has an empty {side} sequence")


# ============= Operations =============

def classify(pair: PairExample, model: PairMatcher, graph: Optional[Graph] = None) -> Tensor:
    """Logits [num_classes] for one pair"""
    return model.logits(graph if graph is not None else Graph(), pair)


def pair_similarity(pair: PairExample, model: PairMatcher) -> float:
    """Probability of the match class, read as a pair similarity score"""
    return float(model.probabilities(pair)[model.matcher_config.match_label])


def evaluate(dataset: Sequence[PairExample], model: PairMatcher) -> EvaluationReport:
    if not dataset:
        raise DomainError("evaluate needs a non-empty dataset")

    num_classes = model.matcher_config.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    tag_counts: Dict[str, List[int]] = {}
    correct = 0
    for pair in dataset:
        if pair.label >= num_classes:
            raise DomainError(f"label {pair.label} outside a {num_classes}-class matcher")
        predicted = model.predict(pair)
        confusion[pair.label, predicted] += 1
        hit = int(predicted == pair.label)
        correct += hit
        counts = tag_counts.setdefault(pair.perturbation_tag.value, [0, 0])
        counts[0] += 1
        counts[1] += hit

    per_tag = {
        tag: TagMetrics(count=count, correct=hits, accuracy=hits / count)
        for tag, (count, hits) in sorted(tag_counts.items())
    }
    return EvaluationReport(
        accuracy=correct / len(dataset),
        total=len(dataset),
        correct=correct,
        per_tag=per_tag,
        confusion=confusion.tolist(),
    )


def compare_reports(candidate: EvaluationReport, baseline: EvaluationReport) -> Dict[str, float]:
    """Accuracy deltas (candidate − baseline) overall and per tag present in both"""
    deltas = {"overall": candidate.accuracy - baseline.accuracy}
    for tag, metrics in candidate.per_tag.items():
        if tag in baseline.per_tag:
            deltas[tag] = metrics.accuracy - baseline.per_tag[tag].accuracy
    return deltas
