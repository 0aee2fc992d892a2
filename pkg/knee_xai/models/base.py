"""Shared pieces of the model families: outputs, slice pooling, conv blocks."""
from __future__ import annotations
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..autograd import Tensor, as_tensor
from ..core.errors import ShapeError
from ..core.schemas import ModelSpec, NormKind, SlicePool
from ..nn import functional as F
from ..nn.modules import Activation, BatchNorm, Conv2d, Dropout, Identity, InstanceNorm, Module, Parameter


@dataclass
class ModelOutput:
    """What one forward pass over a volume produces.

    ``logit`` is a shape-(1,) tensor for classifiers; ``reconstruction`` is
    (s, H, W) for the U-Net families.
    """

    logit: Optional[Tensor] = None
    reconstruction: Optional[Tensor] = None

    @property
    def probability(self) -> Optional[Tensor]:
        return None if self.logit is None else F.sigmoid(self.logit)


class VolumeModel(Module):
    """A model consuming one (s, H, W) volume with its slices run as a batch."""

    def __init__(self, spec: ModelSpec, generator: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.generator = generator

    @property
    def is_classifier(self) -> bool:
        return self.spec.is_classifier

    @property
    def reconstructs(self) -> bool:
        return self.spec.reconstructs

    def trainable_parameters(self) -> List[Parameter]:
        return self.parameters()

    def named_trainable_parameters(self) -> List[tuple]:
        keep = {id(p) for p in self.trainable_parameters()}
        return [(n, p) for n, p in self.named_parameters() if id(p) in keep]

    def forward(self, volume: Tensor) -> ModelOutput:
        raise NotImplementedError


def as_slice_batch(volume: Tensor) -> Tensor:
    """(s, H, W) -> (s, 1, H, W)."""
    volume = as_tensor(volume)
    if volume.ndim != 3:
        raise ShapeError(f"Expected a volume of shape (s, H, W), got {volume.shape}")
    if volume.shape[0] == 0:
        raise ShapeError("Volume has no slices")
    s, h, w = volume.shape
    return volume.reshape(s, 1, h, w)


def pool_slices(features: Tensor, mode: SlicePool) -> Tensor:
    """(s, F) per-slice features -> (1, F) volume features."""
    if SlicePool(mode) == SlicePool.MAX:
        return features.max(axis=0, keepdims=True)
    return features.mean(axis=0, keepdims=True)


def make_norm(kind: NormKind, channels: int) -> Module:
    kind = NormKind(kind)
    if kind == NormKind.BATCH:
        return BatchNorm(channels)
    if kind == NormKind.INSTANCE:
        return InstanceNorm(channels)
    return Identity()


class ConvNormAct(Module):
    """conv -> norm -> activation, the unit every CNN family stacks."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, activation: str,
                 norm: NormKind, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel, stride=stride, padding=kernel // 2, bias=bias, rng=rng)
        self.norm = make_norm(norm, out_channels)
        self.act = Activation(activation)

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.norm(self.conv(x)))


class ConvBlock(Module):
    """Two 3x3 ConvNormAct units with optional dropout in between."""

    def __init__(self, in_channels: int, out_channels: int, activation: str, norm: NormKind, dropout: float,
                 rng: np.random.Generator, generator: np.random.Generator, bias: bool = True):
        super().__init__()
        self.first = ConvNormAct(in_channels, out_channels, 3, 1, activation, norm, rng, bias)
        self.drop = Dropout(dropout, generator)
        self.second = ConvNormAct(out_channels, out_channels, 3, 1, activation, norm, rng, bias)

    def forward(self, x: Tensor) -> Tensor:
        return self.second(self.drop(self.first(x)))
