"""Mini-batch training with weighted sampling and Adam."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, TrainingDiverged
from ..preprocess import TrainingSequence, stack
from .model import ModelBundle, ModelConfig, NormStats, init_params, loss_and_grads, normalize, predict_proba
from .optim import AdamState, adam_step
from .sampler import class_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2048
    epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    threshold: float = 0.5
    batches_per_epoch: int = 0  # 0: ceil(n_train / batch_size)

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1", field="train.batch_size")
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0", field="train.epochs")
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0", field="train.lr")
        if not (0.0 <= self.threshold <= 1.0):
            raise ConfigError("train.threshold must be in [0, 1]", field="train.threshold")
        if self.batches_per_epoch < 0:
            raise ConfigError("train.batches_per_epoch must be >= 0", field="train.batches_per_epoch")
        return self


@dataclass
class EpochMetrics:
    epoch: int
    train_acc: float
    train_bal_acc: float
    val_acc: float
    val_bal_acc: float
    train_loss: float


def accuracy(p: np.ndarray, y: np.ndarray, threshold: float = 0.5) -> tuple[float, float]:
    """(plain accuracy, balanced accuracy); predicted label is 1 when p >= threshold."""
    if len(y) == 0:
        return float("nan"), float("nan")
    pred = (p >= threshold).astype(float)
    plain = float(np.mean(pred == y))
    recalls = [float(np.mean(pred[y == c] == c)) for c in (0.0, 1.0) if np.any(y == c)]
    return plain, float(np.mean(recalls))


def train(train_set: Sequence[TrainingSequence], val_set: Sequence[TrainingSequence],
          model_config: ModelConfig = ModelConfig(), train_config: TrainConfig = TrainConfig(),
          on_epoch: Callable[[EpochMetrics], None] | None = None,
          ) -> tuple[ModelBundle, list[EpochMetrics]]:
    """Train from scratch and return the bundle with the best validation balanced accuracy."""
    cfg = train_config.validate()
    if not train_set:
        raise ValueError("empty training set")
    Xtr, ytr = stack(train_set)
    Xva, yva = stack(val_set)
    if Xtr.shape[1:] != (model_config.input_size, model_config.seq_len):
        raise ConfigError(f"training windows have shape {Xtr.shape[1:]}, model expects "
                          f"({model_config.input_size}, {model_config.seq_len})", field="model.seq_len")
    norm = NormStats.fit(Xtr)
    rng = np.random.default_rng(cfg.seed)
    bundle = ModelBundle(model_config, init_params(model_config, rng), norm, cfg.threshold)
    history: list[EpochMetrics] = []
    if cfg.epochs == 0:
        return bundle, history

    weights = class_weights(ytr)
    probs = weights / weights.sum()
    Xtr_n = normalize(Xtr, norm)
    n_batches = cfg.batches_per_epoch or math.ceil(len(ytr) / cfg.batch_size)
    state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    best, best_score = bundle.copy(), -1.0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(n_batches):
            idx = rng.choice(len(ytr), size=cfg.batch_size, replace=True, p=probs)
            loss, grads = loss_and_grads(bundle.params, Xtr_n[idx], ytr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            adam_step(bundle.params, grads, state)
            losses.append(loss)
        for name, v in bundle.params.items():
            if not np.all(np.isfinite(v)):
                raise TrainingDiverged(f"parameter {name} became non-finite at epoch {epoch}")
        tr_acc, tr_bal = accuracy(predict_proba(bundle, Xtr), ytr, cfg.threshold)
        va_acc, va_bal = accuracy(predict_proba(bundle, Xva), yva, cfg.threshold) if len(yva) else (float("nan"),) * 2
        m = EpochMetrics(epoch, tr_acc, tr_bal, va_acc, va_bal, float(np.mean(losses)))
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
        logger.debug("epoch %d loss %.4f val_bal %.4f", epoch, m.train_loss, va_bal)
        score = va_bal if len(yva) else tr_bal
        if score > best_score:
            best, best_score = bundle.copy(), score
            best.meta = {"epoch": epoch, "val_bal_acc": va_bal}
    return best, history


def save_metrics(path: str | Path, history: Sequence[EpochMetrics]) -> None:
    names = [f.name for f in fields(EpochMetrics)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for m in history:
            w.writerow([getattr(m, n) if n == "epoch" else repr(float(getattr(m, n))) for n in names])
