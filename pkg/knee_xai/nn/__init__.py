from . import functional
from .functional import (
    activation,
    attention,
    conv2d,
    conv_transpose2d,
    dropout,
    linear,
    normalize,
    pool,
    resize_bilinear,
    softmax,
    upsample_bilinear,
)
from .modules import (
    Activation,
    BatchNorm,
    Conv2d,
    ConvTranspose2d,
    Dropout,
    Identity,
    InstanceNorm,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    Pool,
    Sequential,
    Upsample,
    build_layer,
)

__all__ = [
    "functional",
    "activation",
    "attention",
    "conv2d",
    "conv_transpose2d",
    "dropout",
    "linear",
    "normalize",
    "pool",
    "resize_bilinear",
    "softmax",
    "upsample_bilinear",
    "Activation",
    "BatchNorm",
    "Conv2d",
    "ConvTranspose2d",
    "Dropout",
    "Identity",
    "InstanceNorm",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "Pool",
    "Sequential",
    "Upsample",
    "build_layer",
]
