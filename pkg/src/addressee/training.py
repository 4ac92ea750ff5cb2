"""Class-weighted cross-entropy, plain SGD and the epoch loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .corpus import ClassWeights
from .model import ModelConfig, ModelParams, SampleInput, init_params, predict, probabilities
from .tensor import Tensor, backward, log_clamped, make_rng, pick, scale

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    variant: str = "multimodal"
    class_weights: ClassWeights | None = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "train_loss": self.train_loss, "val_accuracy": self.val_accuracy})


def weighted_ce_loss(probs: Tensor, label: int, weights: ClassWeights | Sequence[float] | None = None) -> Tensor:
    """-w[label] * log(max(p[label], 1e-12))."""
    if label not in range(probs.shape[0]):
        raise ValueError(f"label {label} outside 0..{probs.shape[0] - 1}")
    w = 1.0 if weights is None else float(weights[label])
    return scale(log_clamped(pick(probs, label), LOG_CLAMP), -w)


def batch_loss_backward(params: ModelParams, cfg: ModelConfig, batch: Sequence[SampleInput],
                        weights: ClassWeights | None) -> float:
    """Accumulate gradients of the mean weighted loss over ``batch``; return that loss.

    Each sample gets its own graph and backward pass, so utterances of any
    length mix freely without padding.
    """
    total = 0.0
    inv = 1.0 / len(batch)
    for s in batch:
        loss = scale(weighted_ce_loss(probabilities(params, cfg, s), s.label, weights), inv)
        backward(loss)
        total += float(loss.data)
    return total


def sgd_step(params: ModelParams | dict[str, Tensor], learning_rate: float) -> None:
    """theta <- theta - lr * grad for every parameter, then clear gradients."""
    named = params.named_parameters() if isinstance(params, ModelParams) else params
    missing = [k for k, t in named.items() if t.grad is None]
    if missing:
        raise RuntimeError(f"sgd_step: no gradient for {', '.join(missing)}")
    for t in named.values():
        t.data = t.data - learning_rate * t.grad
        t.grad = None


def accuracy(params: ModelParams, cfg: ModelConfig, data: Iterable[SampleInput]) -> float:
    data = list(data)
    hits = sum(predict(params, cfg, s) == s.label for s in data)
    return hits / len(data)


def train(train_set: Sequence[SampleInput], val_set: Sequence[SampleInput], model_cfg: ModelConfig,
          cfg: TrainConfig, embeddings: np.ndarray | None = None,
          init: ModelParams | None = None) -> tuple[Checkpoint, list[EpochRecord]]:
    """Minibatch SGD keeping the parameters of the best validation epoch.

    Ties in validation accuracy keep the earlier epoch. Training stops after
    ``cfg.patience`` epochs without improvement or at ``cfg.max_epochs``.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    if cfg.variant != model_cfg.variant:
        raise ValueError(f"train config variant {cfg.variant!r} != model variant {model_cfg.variant!r}")
    rng = make_rng(cfg.seed)
    params = init if init is not None else init_params(model_cfg, rng, embeddings)
    weights = cfg.class_weights
    history: list[EpochRecord] = []
    best_acc, best_epoch, best_state = -1.0, 0, params.state_arrays()
    stale = 0
    n = len(train_set)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            params.zero_grad()
            running += batch_loss_backward(params, model_cfg, batch, weights) * len(batch)
            sgd_step(params, cfg.learning_rate)
        val_acc = accuracy(params, model_cfg, val_set)
        rec = EpochRecord(epoch=epoch, train_loss=running / n, val_accuracy=val_acc)
        history.append(rec)
        log.info("epoch %d loss %.6f val_acc %.4f", epoch, rec.train_loss, val_acc)
        if val_acc > best_acc:
            best_acc, best_epoch, best_state, stale = val_acc, epoch, params.state_arrays(), 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    meta = {"epoch": best_epoch, "val_accuracy": best_acc, "seed": cfg.seed,
            "learning_rate": cfg.learning_rate, "batch_size": cfg.batch_size,
            "class_weights": list(weights.w) if weights is not None else None}
    return Checkpoint(config=model_cfg, tensors=best_state, metadata=meta), history
