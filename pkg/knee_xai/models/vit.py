"""Two-stage slice-sequence transformer.

Stage one encodes every slice on its own with a small patch transformer and
averages its patch tokens into one slice feature. Stage two runs a standard
transformer over the sequence of slice features with a prepended [CLS] token
and classifies from the [CLS] output.
"""
from __future__ import annotations
from typing import List, Optional, Sequence

import numpy as np

from ..autograd import Tensor, as_tensor, concat
from ..core.errors import ConfigError, ShapeError
from ..core.schemas import Architecture, ModelSpec
from ..nn.modules import Activation, Conv2d, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, Pool
from .base import ModelOutput, VolumeModel, as_slice_batch
from .registry import register_model

MLP_RATIO = 2
POSITION_STD = 0.02


class TransformerBlock(Module):
    """Pre-norm block: x + attn(LN(x)), then x + MLP(LN(x)) with a GELU MLP."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(width)
        self.attn = MultiHeadAttention(width, heads, rng=rng)
        self.norm2 = LayerNorm(width)
        self.fc1 = Linear(width, MLP_RATIO * width, rng=rng)
        self.act = Activation("gelu")
        self.fc2 = Linear(MLP_RATIO * width, width, rng=rng)

    def forward(self, x: Tensor, key_padding_mask: Optional[np.ndarray] = None) -> Tensor:
        x = x + self.attn(self.norm1(x), key_padding_mask=key_padding_mask)
        return x + self.fc2(self.act(self.fc1(self.norm2(x))))


class TokenGrid(Module):
    """(s, h*w, D) patch tokens -> (s, D, h, w) feature maps; the Grad-CAM tap point."""

    def __init__(self, grid: int):
        super().__init__()
        self.grid = grid

    def forward(self, tokens: Tensor) -> Tensor:
        s, _, width = tokens.shape
        return tokens.transpose(0, 2, 1).reshape(s, width, self.grid, self.grid)


class ImageEncoder(Module):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        width, patch = spec.embed_dim, spec.patch_size
        self.grid = spec.input_edge // patch
        self.patch_embed = Conv2d(1, width, patch, stride=patch, rng=rng)
        self.position = Parameter(rng.normal(0.0, POSITION_STD, (1, self.grid * self.grid, width)).astype(np.float32))
        for index in range(1, spec.image_encoder_depth + 1):
            setattr(self, f"block{index}", TransformerBlock(width, spec.transformer_heads, rng))
        self.depth = spec.image_encoder_depth
        self.norm = LayerNorm(width)
        self.token_grid = TokenGrid(self.grid)
        self.gap = Pool("global_avg")

    def forward(self, slices: Tensor) -> Tensor:
        """(s, 1, H, W) -> (s, D) slice features."""
        if slices.shape[2] != self.grid * self.patch_embed.stride or slices.shape[3] != slices.shape[2]:
            raise ShapeError(
                f"Image encoder expects {self.grid * self.patch_embed.stride}-pixel square slices, got {slices.shape[2:]}"
            )
        maps = self.patch_embed(slices)
        s, width = maps.shape[0], maps.shape[1]
        tokens = maps.reshape(s, width, self.grid * self.grid).transpose(0, 2, 1) + self.position
        for index in range(1, self.depth + 1):
            tokens = getattr(self, f"block{index}")(tokens)
        return self.gap(self.token_grid(self.norm(tokens)))


class SequenceEncoder(Module):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        width = spec.embed_dim
        self.max_slices = spec.max_slices
        self.cls_token = Parameter(rng.normal(0.0, POSITION_STD, (1, 1, width)).astype(np.float32))
        self.position = Parameter(rng.normal(0.0, POSITION_STD, (1, spec.max_slices + 1, width)).astype(np.float32))
        for index in range(1, spec.transformer_depth + 1):
            setattr(self, f"block{index}", TransformerBlock(width, spec.transformer_heads, rng))
        self.depth = spec.transformer_depth
        self.norm = LayerNorm(width)

    def forward(self, sequence: Tensor, key_padding_mask: Optional[np.ndarray] = None) -> Tensor:
        """(B, s, D) slice features -> (B, D) [CLS] outputs."""
        batch, length, width = sequence.shape
        if length > self.max_slices:
            raise ShapeError(f"Sequence of {length} slices exceeds max_slices={self.max_slices}")
        cls = self.cls_token.broadcast_to((batch, 1, width))
        tokens = concat([cls, sequence], axis=1) + self.position[:, : length + 1, :]
        mask = None
        if key_padding_mask is not None:
            mask = np.concatenate([np.zeros((batch, 1), dtype=bool), np.asarray(key_padding_mask, dtype=bool)], axis=1)
        for index in range(1, self.depth + 1):
            tokens = getattr(self, f"block{index}")(tokens, key_padding_mask=mask)
        return self.norm(tokens[:, 0, :])


@register_model(Architecture.VIT_TWO_STAGE)
class VitTwoStage(VolumeModel):
    tap_layer = "image_encoder.token_grid"

    def __init__(self, spec: ModelSpec, rng: np.random.Generator, generator: np.random.Generator):
        super().__init__(spec, generator)
        if spec.embed_dim % spec.transformer_heads != 0:
            raise ConfigError(
                f"transformer_heads={spec.transformer_heads} does not divide embed_dim={spec.embed_dim}"
            )
        if spec.input_edge % spec.patch_size != 0:
            raise ConfigError(f"patch_size={spec.patch_size} does not divide input_edge={spec.input_edge}")
        self.image_encoder = ImageEncoder(spec, rng)
        self.sequence_encoder = SequenceEncoder(spec, rng)
        self.head = Linear(spec.embed_dim, 1, rng=rng)

    def forward(self, volume: Tensor) -> ModelOutput:
        features = self.image_encoder(as_slice_batch(volume))
        s, width = features.shape
        cls = self.sequence_encoder(features.reshape(1, s, width))
        return ModelOutput(logit=self.head(cls).reshape(1))

    def forward_batch(self, volumes: Sequence[Tensor]) -> Tensor:
        """Logits (B,) for volumes of different lengths, padded with a key mask."""
        volumes = [as_tensor(v) for v in volumes]
        lengths = [v.shape[0] for v in volumes]
        longest = max(lengths)
        features = self.image_encoder(as_slice_batch(concat(volumes, axis=0)))
        width = features.shape[1]
        rows: List[Tensor] = []
        offset = 0
        for length in lengths:
            row = features[offset: offset + length]
            if length < longest:
                row = concat([row, Tensor(np.zeros((longest - length, width), dtype=features.dtype))], axis=0)
            rows.append(row.reshape(1, longest, width))
            offset += length
        mask = np.array([[i >= length for i in range(longest)] for length in lengths], dtype=bool)
        cls = self.sequence_encoder(concat(rows, axis=0), key_padding_mask=mask)
        return self.head(cls).reshape(len(volumes))
