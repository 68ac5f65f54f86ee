#!/usr/bin/env python3
"""
📊 Composition ablation: the eight f_E ⊙ f_N variants plus the softmax baseline,
each trained from the same seed on the same shards.
"""
import hashlib
import json
import re
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from combined_attention import AttentionMode, NormVariant, Squash
from matcher import PairExample, evaluate
from run_config import RunConfig
from sentry_config import get_logger, track_ablation_variant
from synthetic_data import split_dataset
from tensor_core import DomainError
from trainer import train

logger = get_logger(__name__)

BASELINE_VARIANT = "softmax_baseline"

# (name, f_E, f_N, norm variant)
ABLATION_VARIANTS: List[Tuple[str, Squash, Squash, NormVariant]] = [
    ("tanh*sigmoid", Squash.TANH, Squash.SIGMOID, NormVariant.NONE),
    ("center_e:tanh*sigmoid", Squash.TANH, Squash.SIGMOID, NormVariant.CENTER_E),
    ("center_n:tanh*sigmoid", Squash.TANH, Squash.SIGMOID, NormVariant.CENTER_N),
    ("tanh*tanh", Squash.TANH, Squash.TANH, NormVariant.NONE),
    ("tanh*arctan", Squash.TANH, Squash.ARCTAN, NormVariant.NONE),
    ("sigmoid*tanh", Squash.SIGMOID, Squash.TANH, NormVariant.NONE),
    ("sigmoid*arctan", Squash.SIGMOID, Squash.ARCTAN, NormVariant.NONE),
    ("sigmoid*sigmoid", Squash.SIGMOID, Squash.SIGMOID, NormVariant.NONE),
]


class AblationRow(BaseModel):
    variant: str
    composition: str
    norm_variant: str
    mode: str
    dev_accuracy: float
    test_accuracy: float


class AblationTable(BaseModel):
    rows: List[AblationRow] = Field(default_factory=list)
    data_fingerprint: str = ""
    split_sizes: Dict[str, int] = Field(default_factory=dict)

    def row(self, variant: str) -> AblationRow:
        for row in self.rows:
            if row.variant == variant:
                return row
        raise KeyError(variant)

    def family_accuracy(self) -> Dict[str, float]:
        """Mean test accuracy per f_E family (tanh*, sigmoid*) and the baseline"""
        families: Dict[str, List[float]] = {}
        for row in self.rows:
            family = row.variant if row.mode == AttentionMode.SOFTMAX_BASELINE.value else row.composition.split("*")[0]
            families.setdefault(family, []).append(row.test_accuracy)
        return {name: sum(values) / len(values) for name, values in families.items()}

    def to_rows(self) -> List[Dict]:
        return [row.model_dump() for row in self.rows]


def variant_configs(base: RunConfig) -> List[Tuple[str, RunConfig]]:
    """One RunConfig per ablation row, differing from `base` only in the attention settings.

    A `train.checkpoint_path` becomes one file per variant next to the original.
    """
    configs = []
    for name, f_e, f_n, norm in ABLATION_VARIANTS:
        attention = base.encoder.attention.model_copy(
            update={"f_e": f_e, "f_n": f_n, "norm_variant": norm, "mode": AttentionMode.COMBINED}
        )
        configs.append((name, _with_attention(base, attention, name)))
    baseline = base.encoder.attention.model_copy(update={"mode": AttentionMode.SOFTMAX_BASELINE})
    configs.append((BASELINE_VARIANT, _with_attention(base, baseline, BASELINE_VARIANT)))
    return configs


def variant_checkpoint_path(path: Optional[str], variant: str) -> Optional[str]:
    """`runs/model.json` → `runs/model.center_e_tanh_sigmoid.json`"""
    if not path:
        return None
    target = Path(path)
    slug = re.sub(r"[^A-Za-z0-9]+", "_", variant).strip("_")
    return str(target.with_name(f"{target.stem}.{slug}{target.suffix or '.json'}"))


def _with_attention(base: RunConfig, attention, variant: str) -> RunConfig:
    document = base.to_document()
    document["encoder"]["attention"] = attention.model_dump(mode="json")
    document["train"]["checkpoint_path"] = variant_checkpoint_path(base.train.checkpoint_path, variant)
    return RunConfig.model_validate(document)


def fingerprint(examples: Sequence[PairExample]) -> str:
    payload = "\n".join(json.dumps(e.to_record(), sort_keys=True) for e in examples)
    return hashlib.sha256(payload.encode()).hexdigest()


def run_variant(name: str, config: RunConfig, train_set: Sequence[PairExample],
                dev_set: Sequence[PairExample], test_set: Sequence[PairExample]) -> AblationRow:
    with track_ablation_variant(name):
        model = config.build_model()
        report = train(model, train_set, config.train, dev_set, run_config=config.to_document(), variant=name)
        test_accuracy = evaluate(test_set, model).accuracy if test_set else 0.0
    attention = config.encoder.attention
    return AblationRow(
        variant=name,
        composition=f"{attention.f_e.value}*{attention.f_n.value}",
        norm_variant=attention.norm_variant.value,
        mode=attention.mode.value,
        dev_accuracy=report.best_dev_accuracy,
        test_accuracy=test_accuracy,
    )


def _run_variant_job(job) -> AblationRow:
    return run_variant(*job)


def ablate(base_config: RunConfig, dataset: Sequence[PairExample], workers: int = 1,
           fractions: Optional[Sequence[float]] = None) -> AblationTable:
    """Split once, then train every variant on the identical shards"""
    if not dataset:
        raise DomainError("ablation needs a non-empty dataset")
    if fractions is None:
        dev, test = base_config.train.dev_fraction, base_config.train.test_fraction
        fractions = [1.0 - dev - test, dev, test]
    train_set, dev_set, test_set = split_dataset(dataset, fractions, base_config.train.seed)

    jobs = [(name, config, train_set, dev_set, test_set) for name, config in variant_configs(base_config)]
    logger.info(f"📊 Ablating {len(jobs)} variants on {len(train_set)}/{len(dev_set)}/{len(test_set)} examples")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_variant_job, jobs))
    else:
        rows = [_run_variant_job(job) for job in jobs]

    table = AblationTable(
        rows=rows,
        data_fingerprint=fingerprint(train_set + dev_set + test_set),
        split_sizes={"train": len(train_set), "dev": len(dev_set), "test": len(test_set)},
    )
    for row in rows:
        logger.info(f"  {row.variant:<24} dev {row.dev_accuracy:.3f}  test {row.test_accuracy:.3f}")
    return table
