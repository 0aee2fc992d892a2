"""Inception-style classifier: parallel-branch blocks, dropout between blocks, GAP into a sigmoid linear layer."""
from __future__ import annotations

import numpy as np

from ..autograd import Tensor, concat
from ..core.schemas import Architecture, ModelSpec, NormKind
from ..nn.modules import Dropout, Linear, Module, Pool
from .base import ConvNormAct, ModelOutput, VolumeModel, as_slice_batch, pool_slices
from .registry import register_model

INCEPTION_BLOCKS = 3


class InceptionBlock(Module):
    """Four branches concatenated on channels: 1x1, 1x1->3x3, 1x1->3x3->3x3, 3x3 avg-pool->1x1."""

    def __init__(self, in_channels: int, branch_channels: int, activation: str, rng: np.random.Generator):
        super().__init__()
        b = branch_channels
        norm = NormKind.BATCH
        self.branch1 = ConvNormAct(in_channels, b, 1, 1, activation, norm, rng)
        self.branch3_reduce = ConvNormAct(in_channels, b, 1, 1, activation, norm, rng)
        self.branch3 = ConvNormAct(b, b, 3, 1, activation, norm, rng)
        self.branch5_reduce = ConvNormAct(in_channels, b, 1, 1, activation, norm, rng)
        self.branch5_a = ConvNormAct(b, b, 3, 1, activation, norm, rng)
        self.branch5_b = ConvNormAct(b, b, 3, 1, activation, norm, rng)
        self.branch_pool = Pool("avg", window=3, stride=1, padding=1)
        self.branch_pool_proj = ConvNormAct(in_channels, b, 1, 1, activation, norm, rng)
        self.out_channels = 4 * b

    def forward(self, x: Tensor) -> Tensor:
        return concat(
            [
                self.branch1(x),
                self.branch3(self.branch3_reduce(x)),
                self.branch5_b(self.branch5_a(self.branch5_reduce(x))),
                self.branch_pool_proj(self.branch_pool(x)),
            ],
            axis=1,
        )


@register_model(Architecture.INCEPTION_TINY)
class InceptionTiny(VolumeModel):
    tap_layer = f"block{INCEPTION_BLOCKS}"

    def __init__(self, spec: ModelSpec, rng: np.random.Generator, generator: np.random.Generator):
        super().__init__(spec, generator)
        c0 = spec.base_channels[0]
        self.stem = ConvNormAct(1, c0, 3, 2, spec.activation, NormKind.BATCH, rng)
        previous = c0
        for index in range(1, INCEPTION_BLOCKS + 1):
            channels = spec.base_channels[min(index - 1, len(spec.base_channels) - 1)]
            block = InceptionBlock(previous, max(1, channels // 4), spec.activation, rng)
            setattr(self, f"block{index}", block)
            previous = block.out_channels
            if index < INCEPTION_BLOCKS:
                setattr(self, f"drop{index}", Dropout(spec.dropout_ratio, generator))
                setattr(self, f"reduce{index}", Pool("avg", window=2))
        self.gap = Pool("global_avg")
        self.head = Linear(previous, 1, rng=rng)

    def slice_features(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for index in range(1, INCEPTION_BLOCKS + 1):
            x = getattr(self, f"block{index}")(x)
            if index < INCEPTION_BLOCKS:
                x = getattr(self, f"reduce{index}")(getattr(self, f"drop{index}")(x))
        return self.gap(x)

    def forward(self, volume: Tensor) -> ModelOutput:
        features = self.slice_features(as_slice_batch(volume))
        logit = self.head(pool_slices(features, self.spec.slice_pool)).reshape(1)
        return ModelOutput(logit=logit)
