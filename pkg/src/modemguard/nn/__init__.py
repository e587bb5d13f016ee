from .model import (
    BCE_EPS, ModelBundle, ModelConfig, NormStats, backward, batch_loss, bce_loss, forward,
    forward_reference, init_params, loss_and_grads, predict_proba, zero_params,
)
from .optim import AdamState, adam_step
from .sampler import weighted_sample
from .serialize import load_model, save_model
from .train import EpochMetrics, TrainConfig, accuracy, save_metrics, train

__all__ = [
    "BCE_EPS", "ModelBundle", "ModelConfig", "NormStats", "backward", "batch_loss", "bce_loss",
    "forward", "forward_reference", "init_params", "loss_and_grads", "predict_proba", "zero_params",
    "AdamState", "adam_step", "weighted_sample", "load_model", "save_model",
    "EpochMetrics", "TrainConfig", "accuracy", "save_metrics", "train",
]
