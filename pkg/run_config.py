"""
⚙️ RunConfig: the single JSON document behind every command
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from encoder import EncoderConfig
from matcher import EncodingMode, MatcherConfig, PairMatcher, Pooling
from synthetic_data import SyntheticSpec, TaskMode, vocabulary_size
from trainer import TrainConfig


class RunConfig(BaseModel):
    """Synthetic data, encoder (with attention), matcher and training settings; `{}` is valid"""
    model_config = ConfigDict(extra="forbid")

    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    matcher: MatcherConfig = Field(default_factory=MatcherConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def resolve_derived(self):
        needed_vocab = vocabulary_size(self.synthetic)
        if self.encoder.vocab_size is None:
            self.encoder.vocab_size = needed_vocab
        elif self.encoder.vocab_size < needed_vocab:
            raise ValueError(f"encoder.vocab_size {self.encoder.vocab_size} < synthetic vocabulary {needed_vocab}")

        expected_classes = 3 if self.synthetic.task == TaskMode.NLI else 2
        if "num_classes" not in self.matcher.model_fields_set:
            self.matcher.num_classes = expected_classes
        elif self.matcher.num_classes != expected_classes:
            raise ValueError(f"matcher.num_classes {self.matcher.num_classes} does not fit task {self.synthetic.task.value}")

        longest = self.longest_input()
        if longest > self.encoder.max_seq_len:
            raise ValueError(f"inputs reach {longest} tokens but encoder.max_seq_len is {self.encoder.max_seq_len}")
        return self

    def longest_input(self) -> int:
        if self.matcher.mode == EncodingMode.CROSS:
            return self.matcher.pad_to or 2 * self.synthetic.max_len + 2
        return self.synthetic.max_len + (1 if self.matcher.pooling == Pooling.CLS else 0)

    def to_document(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def build_model(self, params: Optional[Dict] = None) -> PairMatcher:
        if params is None:
            return PairMatcher.initialize(self.encoder, self.matcher, self.train.seed)
        return PairMatcher(self.encoder, self.matcher, params)


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Read and validate a config file; no path means all defaults"""
    if path is None:
        return RunConfig()
    return RunConfig.model_validate(json.loads(Path(path).read_text()))


def run_config_from_document(document: Dict[str, Any]) -> RunConfig:
    return RunConfig.model_validate(document)
