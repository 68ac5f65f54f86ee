#!/usr/bin/env python3
"""
🧪 Synthetic fine-grained-difference pairs
Sentences over a role-partitioned vocabulary (content, number, antonym pairs, filler).
Positives are filler-only rewrites; negatives swap one number, one antonym or one
content word, or pair two unrelated sentences.
"""
import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from matcher import SPECIAL_TOKENS, PairExample, PerturbationTag
from sentry_config import get_logger
from tensor_core import DomainError

logger = get_logger(__name__)

MIN_SHARED_FRACTION = 0.8
MAX_RESAMPLES = 100


class GeneratorConfigError(ValueError):
    """Vocabulary roles too small for the requested construction"""
    pass


# ============= Models =============

class TaskMode(str, Enum):
    PARAPHRASE = "paraphrase"
    NLI = "nli"


class Perturbation(str, Enum):
    SWAP_NUM = "swap_num"
    SWAP_ANT = "swap_ant"
    OVERLAP_HIGH = "overlap_high"
    RANDOM_NEG = "random_neg"


class TokenRole(str, Enum):
    SPECIAL = "special"
    CONTENT = "content"
    NUMBER = "number"
    ANTONYM = "antonym"
    FILLER = "filler"


class Relation(str, Enum):
    """What the brute-force checker finds between two sentences"""
    REWRITE = "rewrite"
    SWAP_NUM = "swap_num"
    SWAP_ANT = "swap_ant"
    OVERLAP_HIGH = "overlap_high"
    UNRELATED = "unrelated"


def _default_perturbations() -> Dict[Perturbation, float]:
    return {
        Perturbation.SWAP_NUM: 0.3,
        Perturbation.SWAP_ANT: 0.3,
        Perturbation.OVERLAP_HIGH: 0.2,
        Perturbation.RANDOM_NEG: 0.2,
    }


class SyntheticSpec(BaseModel):
    """Vocabulary roles, sentence shape, label mix and seed of a synthetic dataset"""
    model_config = ConfigDict(extra="forbid")

    num_content: int = Field(default=40, ge=0)
    num_numbers: int = Field(default=10, ge=0)
    num_antonym_pairs: int = Field(default=8, ge=0)
    num_filler: int = Field(default=12, ge=0)
    min_len: int = Field(default=6, ge=4, description="Every sentence holds a number, an antonym, a content word and a filler")
    max_len: int = Field(default=10, ge=4)
    filler_rate: float = Field(default=0.3, ge=0.0, le=1.0, description="Chance a free slot holds a filler word")
    num_examples: int = Field(default=6000, ge=1)
    positive_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    perturbations: Dict[Perturbation, float] = Field(default_factory=_default_perturbations)
    task: TaskMode = TaskMode.PARAPHRASE
    seed: int = 13

    @field_validator("perturbations")
    @classmethod
    def validate_perturbations(cls, v):
        for name, weight in v.items():
            if weight < 0:
                raise ValueError(f"perturbation weight for {name.value} is negative")
        return v

    @model_validator(mode="after")
    def validate_mix(self):
        if self.min_len > self.max_len:
            raise ValueError(f"min_len {self.min_len} exceeds max_len {self.max_len}")
        if self.positive_fraction < 1.0 and sum(self.perturbations.values()) <= 0:
            raise ValueError("negatives requested but every perturbation weight is 0")
        return self

    def weight(self, perturbation: Perturbation) -> float:
        return float(self.perturbations.get(perturbation, 0.0))

    def label_for(self, relation: Relation) -> int:
        if self.task == TaskMode.PARAPHRASE:
            return 1 if relation == Relation.REWRITE else 0
        if relation == Relation.REWRITE:
            return 0
        if relation == Relation.UNRELATED:
            return 1
        return 2


@dataclass
class Vocabulary:
    """Token names and roles; ids 0-2 are [PAD], [CLS], [SEP]"""
    tokens: List[str]
    roles: List[TokenRole]
    antonym_of: Dict[int, int]

    @classmethod
    def from_spec(cls, spec: SyntheticSpec) -> "Vocabulary":
        tokens = list(SPECIAL_TOKENS)
        roles = [TokenRole.SPECIAL] * len(SPECIAL_TOKENS)
        antonym_of: Dict[int, int] = {}

        def extend(names: Iterable[str], role: TokenRole):
            for name in names:
                tokens.append(name)
                roles.append(role)

        extend((f"w{i}" for i in range(spec.num_content)), TokenRole.CONTENT)
        extend((f"#{i}" for i in range(spec.num_numbers)), TokenRole.NUMBER)
        for i in range(spec.num_antonym_pairs):
            first = len(tokens)
            extend((f"ant{i}+", f"ant{i}-"), TokenRole.ANTONYM)
            antonym_of[first] = first + 1
            antonym_of[first + 1] = first
        extend((f"f{i}" for i in range(spec.num_filler)), TokenRole.FILLER)
        return cls(tokens=tokens, roles=roles, antonym_of=antonym_of)

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, role: TokenRole) -> List[int]:
        return [i for i, r in enumerate(self.roles) if r == role]

    def role(self, token_id: int) -> TokenRole:
        return self.roles[token_id]

    def encode(self, words: Sequence[Union[str, int]]) -> List[int]:
        """Token names (or numeric ids) → ids"""
        index = {name: i for i, name in enumerate(self.tokens)}
        encoded = []
        for word in words:
            if isinstance(word, int) or (isinstance(word, str) and word.isdigit()):
                token_id = int(word)
            elif word in index:
                token_id = index[word]
            else:
                raise DomainError(f"unknown token {word!r}")
            if not 0 <= token_id < len(self.tokens):
                raise DomainError(f"token id {token_id} outside vocabulary of {len(self.tokens)}")
            encoded.append(token_id)
        return encoded

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]


def vocabulary_size(spec: SyntheticSpec) -> int:
    return len(SPECIAL_TOKENS) + spec.num_content + spec.num_numbers + 2 * spec.num_antonym_pairs + spec.num_filler


# ============= Construction =============

def check_roles(spec: SyntheticSpec):
    """Raise GeneratorConfigError when a requested construction has too few tokens"""
    problems = []
    if spec.num_content < 1:
        problems.append("at least 1 content word is needed")
    if spec.num_numbers < 1:
        problems.append("at least 1 number is needed")
    if spec.num_antonym_pairs < 1:
        problems.append("at least 1 antonym pair is needed")
    if spec.num_filler < 1:
        problems.append("at least 1 filler word is needed")

    negatives = spec.positive_fraction < 1.0
    if negatives and spec.weight(Perturbation.SWAP_NUM) > 0 and spec.num_numbers < 2:
        problems.append("swap_num needs at least 2 numbers")
    if negatives and spec.weight(Perturbation.OVERLAP_HIGH) > 0 and spec.num_content < 2:
        problems.append("overlap_high needs at least 2 content words")
    if spec.positive_fraction > 0.0 and spec.num_filler < 2:
        problems.append("filler rewrites need at least 2 filler words")
    if problems:
        raise GeneratorConfigError("; ".join(problems))


class SentenceFactory:
    """Draws sentences and their perturbations from one per-example generator"""

    def __init__(self, vocab: Vocabulary, spec: SyntheticSpec, rng: np.random.Generator):
        self.vocab = vocab
        self.spec = spec
        self.rng = rng
        self.content = vocab.ids(TokenRole.CONTENT)
        self.numbers = vocab.ids(TokenRole.NUMBER)
        self.antonyms = vocab.ids(TokenRole.ANTONYM)
        self.fillers = vocab.ids(TokenRole.FILLER)

    def _pick(self, pool: Sequence[int], exclude: Optional[int] = None) -> int:
        choices = [t for t in pool if t != exclude]
        return int(choices[self.rng.integers(len(choices))])

    def sentence(self) -> List[int]:
        length = int(self.rng.integers(self.spec.min_len, self.spec.max_len + 1))
        slots = [self._pick(self.numbers), self._pick(self.antonyms),
                 self._pick(self.content), self._pick(self.fillers)]
        for _ in range(length - len(slots)):
            pool = self.fillers if self.rng.random() < self.spec.filler_rate else self.content
            slots.append(self._pick(pool))
        order = self.rng.permutation(length)
        return [slots[i] for i in order]

    def _positions(self, tokens: Sequence[int], role: TokenRole) -> List[int]:
        return [i for i, t in enumerate(tokens) if self.vocab.role(t) == role]

    def rewrite(self, tokens: Sequence[int]) -> List[int]:
        """Substitute up to 20% of positions, filler for a different filler only"""
        out = list(tokens)
        filler_positions = self._positions(out, TokenRole.FILLER)
        limit = min(len(filler_positions), int(np.floor((1.0 - MIN_SHARED_FRACTION) * len(out))))
        count = int(self.rng.integers(0, limit + 1))
        if count == 0:
            return out
        for i in self.rng.choice(filler_positions, size=count, replace=False):
            out[int(i)] = self._pick(self.fillers, exclude=out[int(i)])
        return out

    def swap(self, tokens: Sequence[int], role: TokenRole) -> List[int]:
        out = list(tokens)
        positions = self._positions(out, role)
        i = int(positions[self.rng.integers(len(positions))])
        if role == TokenRole.ANTONYM:
            out[i] = self.vocab.antonym_of[out[i]]
        elif role == TokenRole.NUMBER:
            out[i] = self._pick(self.numbers, exclude=out[i])
        else:
            out[i] = self._pick(self.content, exclude=out[i])
        return out

    def unrelated(self, tokens: Sequence[int]) -> List[int]:
        for _ in range(MAX_RESAMPLES):
            candidate = self.sentence()
            if relation_between(tokens, candidate, self.vocab) == Relation.UNRELATED:
                return candidate
        raise GeneratorConfigError("could not draw an unrelated sentence; enlarge the vocabulary")


PERTURBATION_ROLES = {
    Perturbation.SWAP_NUM: (TokenRole.NUMBER, PerturbationTag.SWAP_NUM),
    Perturbation.SWAP_ANT: (TokenRole.ANTONYM, PerturbationTag.SWAP_ANT),
    Perturbation.OVERLAP_HIGH: (TokenRole.CONTENT, PerturbationTag.OVERLAP_HIGH),
}


def generate_example(spec: SyntheticSpec, vocab: Vocabulary, index: int) -> PairExample:
    """Example `index` depends only on (seed, index)"""
    rng = np.random.default_rng([spec.seed, index])
    factory = SentenceFactory(vocab, spec, rng)
    q = factory.sentence()

    if rng.random() < spec.positive_fraction:
        p = factory.rewrite(q)
        return PairExample(tokens_q=q, tokens_p=p, label=spec.label_for(Relation.REWRITE))

    kinds = [k for k in Perturbation if spec.weight(k) > 0]
    weights = np.array([spec.weight(k) for k in kinds])
    kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
    if kind == Perturbation.RANDOM_NEG:
        return PairExample(tokens_q=q, tokens_p=factory.unrelated(q), label=spec.label_for(Relation.UNRELATED))

    role, tag = PERTURBATION_ROLES[kind]
    p = factory.swap(q, role)
    return PairExample(tokens_q=q, tokens_p=p, label=spec.label_for(Relation(kind.value)), perturbation_tag=tag)


def generate(spec: SyntheticSpec) -> List[PairExample]:
    check_roles(spec)
    vocab = Vocabulary.from_spec(spec)
    examples = [generate_example(spec, vocab, i) for i in range(spec.num_examples)]
    logger.info(f"✅ Generated {len(examples)} {spec.task.value} pairs (seed {spec.seed})")
    return examples


# ============= Label checker =============

def relation_between(q: Sequence[int], p: Sequence[int], vocab: Vocabulary) -> Relation:
    """Re-derive the construction relating two sentences from their tokens alone"""
    if len(q) != len(p):
        return Relation.UNRELATED
    diffs = [i for i in range(len(q)) if q[i] != p[i]]
    filler_only = all(
        vocab.role(q[i]) == TokenRole.FILLER and vocab.role(p[i]) == TokenRole.FILLER for i in diffs
    )
    if filler_only:
        if len(diffs) > int(np.floor((1.0 - MIN_SHARED_FRACTION) * len(q))):
            return Relation.UNRELATED
        return Relation.REWRITE
    if len(diffs) != 1:
        return Relation.UNRELATED

    a, b = q[diffs[0]], p[diffs[0]]
    role_a, role_b = vocab.role(a), vocab.role(b)
    if role_a == role_b == TokenRole.NUMBER:
        return Relation.SWAP_NUM
    if role_a == role_b == TokenRole.ANTONYM and vocab.antonym_of.get(a) == b:
        return Relation.SWAP_ANT
    if role_a == role_b == TokenRole.CONTENT:
        return Relation.OVERLAP_HIGH
    return Relation.UNRELATED


RELATION_TAGS = {
    Relation.SWAP_NUM: PerturbationTag.SWAP_NUM,
    Relation.SWAP_ANT: PerturbationTag.SWAP_ANT,
    Relation.OVERLAP_HIGH: PerturbationTag.OVERLAP_HIGH,
}


def derive_label(example: PairExample, vocab: Vocabulary, spec: SyntheticSpec) -> Tuple[int, PerturbationTag]:
    relation = relation_between(example.tokens_q, example.tokens_p, vocab)
    return spec.label_for(relation), RELATION_TAGS.get(relation, PerturbationTag.NONE)


def check_labels(examples: Sequence[PairExample], vocab: Vocabulary, spec: SyntheticSpec) -> List[Dict]:
    """Every example whose stored label or tag disagrees with the re-derived one"""
    mismatches = []
    for index, example in enumerate(examples):
        label, tag = derive_label(example, vocab, spec)
        if label != example.label or tag != example.perturbation_tag:
            mismatches.append({
                "index": index,
                "stored": [example.label, example.perturbation_tag.value],
                "derived": [label, tag.value],
            })
    return mismatches


# ============= Dataset I/O =============

def write_jsonl(path: Union[str, Path], examples: Sequence[PairExample]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as handle:
        for example in examples:
            handle.write(json.dumps(example.to_record()) + "\n")
    return path


def read_jsonl(path: Union[str, Path], vocab: Optional[Vocabulary] = None) -> List[PairExample]:
    """Load {"q", "p", "label", "tag"} lines; token names need `vocab`"""
    examples = []
    with Path(path).open() as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                for side in ("q", "p"):
                    values = record.get(side, [])
                    if any(isinstance(v, str) for v in values):
                        if vocab is None:
                            raise DomainError("token names need a vocabulary")
                        record[side] = vocab.encode(values)
                examples.append(PairExample.model_validate(record))
            except (json.JSONDecodeError, ValidationError, DomainError, AttributeError) as e:
                raise DomainError(f"{path}:{line_number}: {e}") from e
    return examples


def summarize(examples: Sequence[PairExample]) -> Dict[str, Dict[str, int]]:
    labels = Counter(str(e.label) for e in examples)
    tags = Counter(e.perturbation_tag.value for e in examples)
    return {"labels": dict(sorted(labels.items())), "tags": dict(sorted(tags.items()))}


def split_dataset(examples: Sequence[PairExample], fractions: Sequence[float],
                  seed: int) -> List[List[PairExample]]:
    """Seeded shuffle, then consecutive shards sized by `fractions` (last shard takes the rest)"""
    if not fractions or any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-9:
        raise DomainError(f"invalid split fractions {list(fractions)}")
    order = np.random.default_rng(seed).permutation(len(examples))
    shards, start = [], 0
    for i, fraction in enumerate(fractions):
        stop = len(examples) if i == len(fractions) - 1 else start + int(round(fraction * len(examples)))
        shards.append([examples[j] for j in order[start:stop]])
        start = stop
    return shards
