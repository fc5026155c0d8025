from .checkpoint import load_checkpoint, save_checkpoint
from .net import NetConfig, PatchDenoiserNet, dsm_loss
from .training import (
    Adam,
    Checkpoint,
    PatchDataset,
    TrainConfig,
    sample_training_batch,
    sample_training_patch,
    train,
)

__all__ = [
    "Adam",
    "Checkpoint",
    "NetConfig",
    "PatchDataset",
    "PatchDenoiserNet",
    "TrainConfig",
    "dsm_loss",
    "load_checkpoint",
    "sample_training_batch",
    "sample_training_patch",
    "save_checkpoint",
    "train",
]
