from genir.model.config import ModelConfig, param_shapes
from genir.model.net import ModelParams, forward, init_model
from genir.model.losses import (
    consistency_loss_kl,
    consistency_loss_softmax,
    cross_entropy,
)
from genir.model.optim import AdamState, LossReport, LrSchedule, init_adam, train_step
from genir.model.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "ModelConfig",
    "param_shapes",
    "ModelParams",
    "init_model",
    "forward",
    "cross_entropy",
    "consistency_loss_kl",
    "consistency_loss_softmax",
    "AdamState",
    "LrSchedule",
    "LossReport",
    "init_adam",
    "train_step",
    "save_checkpoint",
    "load_checkpoint",
]
