from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .core import Tensor, is_grad_enabled, no_grad
from .functional import (
    batch_norm,
    conv2d,
    dense,
    dropout,
    gaussian_noise,
    global_avg_pool,
    relu,
    sigmoid,
    spatial_dropout,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "CheckpointError",
    "Tensor",
    "adam_step",
    "batch_norm",
    "conv2d",
    "dense",
    "dropout",
    "gaussian_noise",
    "global_avg_pool",
    "is_grad_enabled",
    "load_checkpoint",
    "no_grad",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "spatial_dropout",
]
