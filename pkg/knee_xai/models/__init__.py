from .base import ModelOutput, VolumeModel
from .losses import bce, combined_loss, mse
from .optim import Adam
from .registry import register_model, registered_architectures
from .zoo import (
    HybridOutput,
    build_model,
    classify_batch,
    classify_volume,
    default_tap_layer,
    hybrid_forward,
    make_optimizer,
    parameter_count,
    reconstruct,
    train_step,
    volume_loss,
)

__all__ = [
    "ModelOutput",
    "VolumeModel",
    "bce",
    "combined_loss",
    "mse",
    "Adam",
    "register_model",
    "registered_architectures",
    "HybridOutput",
    "build_model",
    "classify_batch",
    "classify_volume",
    "default_tap_layer",
    "hybrid_forward",
    "make_optimizer",
    "parameter_count",
    "reconstruct",
    "train_step",
    "volume_loss",
]
