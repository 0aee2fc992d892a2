"""U-Net autoencoder and the U-Net + perceptron dual-task hybrid."""
from __future__ import annotations
from typing import List

import numpy as np

from ..autograd import Tensor, concat
from ..core.errors import ShapeError
from ..core.schemas import Architecture, MlpHead, ModelSpec, Upsampling
from ..nn.modules import Activation, Conv2d, ConvTranspose2d, Linear, Module, Parameter, Pool, Sequential, Upsample
from .base import ConvBlock, ModelOutput, VolumeModel, as_slice_batch, pool_slices
from .registry import register_model


def _upsampler(spec: ModelSpec, in_channels: int, out_channels: int, rng: np.random.Generator) -> Module:
    if Upsampling(spec.upsampling) == Upsampling.TRANSPOSED_CONV:
        return ConvTranspose2d(in_channels, out_channels, 2, stride=2, bias=spec.conv_bias, rng=rng)
    return Sequential(Upsample(2), Conv2d(in_channels, out_channels, 1, bias=spec.conv_bias, rng=rng))


@register_model(Architecture.UNET)
class UNet(VolumeModel):
    """Encoder levels for all but the last channel count, a bottleneck at the last.

    Downsampling is 2x2 average pooling, so slice extents must be divisible
    by 2 ** (len(base_channels) - 1).
    """

    tap_layer = "bottleneck"

    def __init__(self, spec: ModelSpec, rng: np.random.Generator, generator: np.random.Generator):
        super().__init__(spec, generator)
        channels = spec.base_channels
        self.levels = len(channels) - 1
        act, norm, drop, bias = spec.activation, spec.norm, spec.encoder_dropout, spec.conv_bias
        previous = 1
        for level in range(self.levels):
            block = ConvBlock(previous, channels[level], act, norm, drop, rng, generator, bias)
            setattr(self, f"encoder{level + 1}", block)
            previous = channels[level]
        self.down = Pool("avg", window=2)
        self.bottleneck = ConvBlock(previous, channels[-1], act, norm, drop, rng, generator, bias)
        previous = channels[-1]
        for level in reversed(range(self.levels)):
            setattr(self, f"up{level + 1}", _upsampler(spec, previous, channels[level], rng))
            setattr(self, f"decoder{level + 1}", ConvBlock(2 * channels[level], channels[level], act, norm, 0.0,
                                                           rng, generator, bias))
            previous = channels[level]
        self.final = Conv2d(previous, 1, 1, bias=bias, rng=rng)

    @property
    def divisor(self) -> int:
        return 2 ** self.levels

    def check_extent(self, height: int, width: int) -> None:
        if height % self.divisor or width % self.divisor:
            raise ShapeError(
                f"Slice extent {height}x{width} must be divisible by {self.divisor} "
                f"(2^{self.levels} for {self.levels} pooling levels)"
            )

    def encode(self, x: Tensor) -> tuple[Tensor, List[Tensor]]:
        """(N, 1, H, W) -> bottleneck maps and the skip tensors, shallow first."""
        self.check_extent(x.shape[2], x.shape[3])
        skips = []
        for level in range(1, self.levels + 1):
            x = getattr(self, f"encoder{level}")(x)
            skips.append(x)
            x = self.down(x)
        return self.bottleneck(x), skips

    def decode(self, latent: Tensor, skips: List[Tensor]) -> Tensor:
        x = latent
        for level in reversed(range(1, self.levels + 1)):
            x = getattr(self, f"up{level}")(x)
            x = getattr(self, f"decoder{level}")(concat([x, skips[level - 1]], axis=1))
        return self.final(x)

    def reconstruct_slices(self, x: Tensor) -> Tensor:
        latent, skips = self.encode(x)
        return self.decode(latent, skips)

    def forward(self, volume: Tensor) -> ModelOutput:
        slices = as_slice_batch(volume)
        recon = self.reconstruct_slices(slices)
        return ModelOutput(reconstruction=recon.reshape(volume.shape))


class ResidualMLP(Module):
    def __init__(self, in_features: int, hidden: int, activation: str, rng: np.random.Generator):
        super().__init__()
        self.inp = Linear(in_features, hidden, rng=rng)
        self.act = Activation(activation)
        self.hidden = Linear(hidden, hidden, rng=rng)
        self.out = Linear(hidden, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.act(self.inp(x))
        h = h + self.act(self.hidden(h))
        return self.out(h)


def build_head(spec: ModelSpec, in_features: int, rng: np.random.Generator) -> Module:
    if MlpHead(spec.mlp_head) == MlpHead.RESIDUAL:
        return ResidualMLP(in_features, spec.mlp_hidden, spec.activation, rng)
    return Sequential(
        Linear(in_features, spec.mlp_hidden, rng=rng),
        Activation(spec.activation),
        Linear(spec.mlp_hidden, 1, rng=rng),
    )


@register_model(Architecture.UNET_MLP)
class UNetMLP(UNet):
    """Shared encoder feeding the decoder and a perceptron on the pooled latent."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator, generator: np.random.Generator):
        super().__init__(spec, rng, generator)
        self.latent_pool = Pool("global_avg")
        self.mlp = build_head(spec, spec.base_channels[-1], rng)

    def encoder_parameters(self) -> List[Parameter]:
        names = [f"encoder{level}" for level in range(1, self.levels + 1)] + ["bottleneck"]
        return [p for name in names for p in getattr(self, name).parameters()]

    def trainable_parameters(self) -> List[Parameter]:
        if not self.spec.freeze_encoder:
            return self.parameters()
        frozen = {id(p) for p in self.encoder_parameters()}
        return [p for p in self.parameters() if id(p) not in frozen]

    def forward(self, volume: Tensor) -> ModelOutput:
        slices = as_slice_batch(volume)
        latent, skips = self.encode(slices)
        recon = self.decode(latent, skips).reshape(volume.shape)
        features = pool_slices(self.latent_pool(latent), self.spec.slice_pool)
        return ModelOutput(logit=self.mlp(features).reshape(1), reconstruction=recon)
