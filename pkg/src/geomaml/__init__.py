"""Episodic meta-learning (MAML) for region-shifted land-cover tiles.

A small float64 autodiff engine with second-order gradients, CNN and U-Net
models, a synthetic region-shift generator with episodic task sampling, MAML
and regular pretraining, few-shot evaluation metrics, and weight-space
diagnostics.
"""
__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .models import FULL_SCALE_CNN, CnnConfig, UnetConfig, build_cnn, build_unet, cnn_param_count
from .training import TrainConfig, adapt, finetune_grid_search, maml_train, pretrain

__all__ = [
    "__version__", "Checkpoint", "load_checkpoint", "save_checkpoint",
    "CnnConfig", "UnetConfig", "FULL_SCALE_CNN", "build_cnn", "build_unet", "cnn_param_count",
    "TrainConfig", "adapt", "pretrain", "maml_train", "finetune_grid_search",
]
