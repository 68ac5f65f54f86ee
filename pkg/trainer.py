#!/usr/bin/env python3
"""
🏋️ Adam training loop for the pair matcher
One graph per example, batch-averaged gradients, global norm clipping,
per-epoch dev accuracy with best-epoch parameter retention.
"""
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from checkpoint import save_checkpoint
from matcher import EvaluationReport, PairExample, PairMatcher, evaluate
from sentry_config import get_logger, track_training_epoch
from synthetic_data import split_dataset
from tensor_core import DomainError, Graph, make_rng

logger = get_logger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became NaN/Inf"""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"training diverged at step {step}: loss {value}")


# ============= Models =============

class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=16, gt=0)
    epochs: int = Field(default=20, ge=1)
    seed: int = 7
    clip_norm: Optional[float] = Field(default=1.0, ge=0.0, description="0 or null disables clipping")
    checkpoint_path: Optional[str] = None
    dev_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    test_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    max_steps: Optional[int] = Field(default=None, gt=0)


class EpochRecord(BaseModel):
    epoch: int
    mean_loss: float
    dev_accuracy: float


class TrainingReport(BaseModel):
    config: Dict[str, Any] = Field(default_factory=dict)
    loss_curve: List[float] = Field(default_factory=list)
    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: int = -1
    best_dev_accuracy: float = 0.0
    steps: int = 0
    dev_metrics: Optional[EvaluationReport] = None


# ============= Optimizer =============

class AdamOptimizer:
    """Adam with bias correction over a dict of named arrays, updated in place"""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    @classmethod
    def from_config(cls, config: TrainConfig) -> "AdamOptimizer":
        return cls(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        correction_1 = 1.0 - self.beta1 ** self.t
        correction_2 = 1.0 - self.beta2 ** self.t
        step_size = self.lr / correction_1

        for name, value in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(value)
                self.v[name] = np.zeros_like(value)
            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)
            value -= step_size * self.m[name] / (np.sqrt(self.v[name] / correction_2) + self.eps)


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    """Scale all gradients together so their global L2 norm is at most max_norm; returns the pre-clip norm"""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def batch_gradients(model: PairMatcher, batch: Sequence[PairExample]):
    """(mean loss, mean gradients) over a batch; each example gets its own graph"""
    total = 0.0
    grads = {name: np.zeros_like(value) for name, value in model.params.items()}
    for pair in batch:
        graph = Graph()
        loss = model.loss(graph, pair)
        graph.backward(loss)
        total += loss.item()
        for name, g in graph.parameter_grads().items():
            grads[name] += g
    for g in grads.values():
        g /= len(batch)
    return total / len(batch), grads


def batch_loss(model: PairMatcher, batch: Sequence[PairExample]) -> float:
    return float(np.mean([model.loss(Graph(), pair).item() for pair in batch]))


# ============= Training =============

def train(model: PairMatcher, dataset: Sequence[PairExample], config: TrainConfig,
          dev_set: Optional[Sequence[PairExample]] = None, *,
          run_config: Optional[Dict[str, Any]] = None, variant: str = "model") -> TrainingReport:
    """Train `model` in place; on return it holds the parameters of the best dev epoch"""
    if dev_set is None:
        train_set, dev_set = split_dataset(dataset, [1.0 - config.dev_fraction, config.dev_fraction], config.seed)
    else:
        train_set = list(dataset)
    if not train_set or not dev_set:
        raise DomainError(f"training needs non-empty train and dev sets (got {len(train_set)} / {len(dev_set)})")

    rng = make_rng(config.seed)
    optimizer = AdamOptimizer.from_config(config)
    report = TrainingReport(config=run_config or {})
    best_params = {name: value.copy() for name, value in model.params.items()}
    step = 0

    logger.info(f"🏋️ Training {variant}: {len(train_set)} train / {len(dev_set)} dev, {model.parameter_count()} weights")
    for epoch in range(config.epochs):
        with track_training_epoch(epoch, variant):
            order = rng.permutation(len(train_set))
            epoch_losses = []
            for start in range(0, len(order), config.batch_size):
                batch = [train_set[i] for i in order[start:start + config.batch_size]]
                loss, grads = batch_gradients(model, batch)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(step, loss)
                norm = clip_gradients(grads, config.clip_norm)
                if not math.isfinite(norm):
                    raise TrainingDivergedError(step, loss)
                optimizer.step(model.params, grads)
                report.loss_curve.append(loss)
                epoch_losses.append(loss)
                step += 1
                if config.max_steps is not None and step >= config.max_steps:
                    break

            dev_accuracy = evaluate(dev_set, model).accuracy
            record = EpochRecord(epoch=epoch, mean_loss=float(np.mean(epoch_losses)), dev_accuracy=dev_accuracy)
            report.epochs.append(record)
            logger.info(f"📈 {variant} epoch {epoch}: loss {record.mean_loss:.4f}, dev accuracy {dev_accuracy:.3f}")

            if report.best_epoch < 0 or dev_accuracy > report.best_dev_accuracy:
                report.best_epoch = epoch
                report.best_dev_accuracy = dev_accuracy
                best_params = {name: value.copy() for name, value in model.params.items()}

        if config.max_steps is not None and step >= config.max_steps:
            break

    model.params = best_params
    report.steps = step
    report.dev_metrics = evaluate(dev_set, model)
    if config.checkpoint_path:
        save_checkpoint(Path(config.checkpoint_path), model.params, run_config)
    logger.info(f"✅ {variant}: best dev accuracy {report.best_dev_accuracy:.3f} at epoch {report.best_epoch}")
    return report
