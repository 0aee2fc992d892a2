"""Entry points over the model families: build, classify, reconstruct, train."""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from typing import Any, List, Sequence

import numpy as np

from ..autograd import Tensor, as_tensor, backward, no_grad
from ..core.errors import ConfigError, NonFiniteLossError, ShapeError, TargetMismatchError
from ..core.schemas import Architecture, LossConfig, ModelSpec
from ..nn import functional as F
from .base import VolumeModel
from .losses import combined_loss
from .optim import Adam
from .registry import get_builder

# populate the registry
from . import inception, resnet, unet, vit  # noqa: F401

logger = logging.getLogger("KneeXAI.Models")


@dataclass
class HybridOutput:
    reconstruction: np.ndarray
    probability: float


def volume_array(volume: Any) -> np.ndarray:
    """Raw (s, H, W) array of a Volume, Tensor or array."""
    if isinstance(volume, Tensor):
        return volume.data
    if isinstance(volume, np.ndarray):
        return volume
    return np.asarray(volume.data)


def build_model(spec: ModelSpec, seed: int = 0) -> VolumeModel:
    """Instantiate ``spec`` with parameters drawn deterministically from ``seed``.

    Initialization and dropout masks use separate child streams of the seed.
    """
    init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(init_seq)
    generator = np.random.default_rng(dropout_seq)
    if spec.architecture in (Architecture.UNET, Architecture.UNET_MLP):
        divisor = 2 ** (len(spec.base_channels) - 1)
        if spec.input_edge % divisor:
            raise ConfigError(f"input_edge={spec.input_edge} must be divisible by {divisor} for this channel plan")
    model = get_builder(spec.architecture)(spec, rng, generator)
    logger.debug(f"Built {spec.architecture.value} with {parameter_count(model)} parameters (seed {seed})")
    return model


def parameter_count(model: VolumeModel) -> int:
    return int(sum(p.size for p in model.parameters()))


def default_tap_layer(spec: ModelSpec) -> str:
    """Layer whose activations feed global average pooling (or the encoder's last block before pooling)."""
    return get_builder(spec.architecture).tap_layer


def make_optimizer(model: VolumeModel) -> Adam:
    spec = model.spec
    decay = spec.reg_coeff if spec.architecture == Architecture.INCEPTION_TINY else 0.0
    return Adam(model.named_trainable_parameters(), lr=spec.learning_rate, weight_decay=decay)


def _require_classifier(model: VolumeModel) -> None:
    if not model.is_classifier:
        raise TargetMismatchError(f"{model.spec.architecture.value} has no classification head")


def classify_volume(model: VolumeModel, volume: Any) -> float:
    """Volume-level probability in evaluation mode."""
    _require_classifier(model)
    data = volume_array(volume)
    if data.ndim != 3 or data.shape[0] == 0:
        raise ShapeError(f"Cannot classify an empty or malformed volume of shape {data.shape}")
    model.eval()
    with no_grad():
        logit = model(Tensor(data)).logit
        return float(F.sigmoid(logit).item())


def classify_batch(model: VolumeModel, volumes: Sequence[Any]) -> List[float]:
    """Probabilities for several volumes; the transformer runs them as one padded batch."""
    _require_classifier(model)
    arrays = [volume_array(v) for v in volumes]
    if not arrays:
        return []
    if not hasattr(model, "forward_batch"):
        return [classify_volume(model, a) for a in arrays]
    model.eval()
    with no_grad():
        logits = model.forward_batch([Tensor(a) for a in arrays])
        return [float(p) for p in F.sigmoid(logits).data]


def reconstruct(model: VolumeModel, image: Any) -> Tensor:
    """Same-extent reconstruction of an (H, W), (s, H, W) or (N, 1, H, W) input."""
    if not model.reconstructs:
        raise TargetMismatchError(f"{model.spec.architecture.value} does not reconstruct")
    x = as_tensor(volume_array(image) if not isinstance(image, Tensor) else image)
    shape = x.shape
    if x.ndim == 2:
        x = x.reshape(1, 1, *shape)
    elif x.ndim == 3:
        x = x.reshape(shape[0], 1, shape[1], shape[2])
    elif x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"Cannot reconstruct input of shape {shape}")
    model.check_extent(x.shape[2], x.shape[3])
    model.eval()
    with no_grad():
        return model.reconstruct_slices(x).reshape(shape)


def hybrid_forward(model: VolumeModel, volume: Any) -> HybridOutput:
    if model.spec.architecture != Architecture.UNET_MLP:
        raise TargetMismatchError("hybrid_forward needs a unet_mlp model")
    model.eval()
    with no_grad():
        out = model(Tensor(volume_array(volume)))
        probability = float(F.sigmoid(out.logit).item())
    return HybridOutput(reconstruction=out.reconstruction.data, probability=probability)


def volume_loss(model: VolumeModel, volume: Any, loss_cfg: LossConfig) -> Tensor:
    """Training objective of one volume: BCE for classifiers, MSE for reconstruction, both for the hybrid."""
    x = Tensor(volume_array(volume))
    out = model(x)
    label = getattr(volume, "label", None)
    probability = out.probability if model.is_classifier else None
    return combined_loss(out.reconstruction, x if out.reconstruction is not None else None,
                         probability, label, loss_cfg)


def train_step(model: VolumeModel, volume: Any, optimizer: Adam, loss_cfg: LossConfig) -> float:
    """One Adam update on one volume (its slices form the batch)."""
    model.train()
    optimizer.zero_grad()
    loss = volume_loss(model, volume, loss_cfg)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(step=optimizer.t + 1, value=value)
    backward(loss)
    optimizer.step()
    return value
