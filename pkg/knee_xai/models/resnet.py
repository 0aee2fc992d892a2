"""Residual CNN classifier: strided stem, four residual blocks, GAP, slice pooling, linear head."""
from __future__ import annotations

import numpy as np

from ..autograd import Tensor
from ..core.schemas import Architecture, ModelSpec, NormKind
from ..nn.modules import Activation, Conv2d, Dropout, Identity, Linear, Module, Pool
from .base import ConvNormAct, ModelOutput, VolumeModel, as_slice_batch, make_norm, pool_slices
from .registry import register_model

RESIDUAL_BLOCKS = 4


class ResidualBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, activation: str, norm: NormKind,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = ConvNormAct(in_channels, out_channels, 3, stride, activation, norm, rng)
        self.conv2 = Conv2d(out_channels, out_channels, 3, padding=1, rng=rng)
        self.norm2 = make_norm(norm, out_channels)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv2d(in_channels, out_channels, 1, stride=stride, rng=rng)
        else:
            self.shortcut = Identity()
        self.act = Activation(activation)

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.norm2(self.conv2(self.conv1(x))) + self.shortcut(x))


def block_plan(base_channels: list[int]) -> list[tuple[int, int]]:
    """(channels, stride) for each residual block.

    Block i takes base_channels[i] (the last entry repeats); a block that
    widens also halves the grid.
    """
    plan = []
    previous = base_channels[0]
    for i in range(RESIDUAL_BLOCKS):
        channels = base_channels[min(i, len(base_channels) - 1)]
        plan.append((channels, 2 if channels != previous else 1))
        previous = channels
    return plan


@register_model(Architecture.RESNET_TINY)
class ResNetTiny(VolumeModel):
    tap_layer = f"layer{RESIDUAL_BLOCKS}"

    def __init__(self, spec: ModelSpec, rng: np.random.Generator, generator: np.random.Generator):
        super().__init__(spec, generator)
        c0 = spec.base_channels[0]
        self.stem = ConvNormAct(1, c0, 3, 2, spec.activation, NormKind.BATCH, rng)
        previous = c0
        for index, (channels, stride) in enumerate(block_plan(spec.base_channels), start=1):
            setattr(self, f"layer{index}", ResidualBlock(previous, channels, stride, spec.activation,
                                                         NormKind.BATCH, rng))
            previous = channels
        self.gap = Pool("global_avg")
        self.dropout = Dropout(spec.dropout_ratio, generator)
        self.head = Linear(previous, 1, rng=rng)

    def slice_features(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for index in range(1, RESIDUAL_BLOCKS + 1):
            x = getattr(self, f"layer{index}")(x)
        return self.gap(x)

    def forward(self, volume: Tensor) -> ModelOutput:
        features = self.slice_features(as_slice_batch(volume))
        pooled = pool_slices(features, self.spec.slice_pool)
        logit = self.head(self.dropout(pooled)).reshape(1)
        return ModelOutput(logit=logit)
