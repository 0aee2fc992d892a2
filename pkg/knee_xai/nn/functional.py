"""Forward/backward kernels for the layers the model zoo is built from.

All image tensors are laid out N x C x H x W. Convolutions and pooling work on
strided window views of the padded input; their backward passes scatter the
window gradients back with one strided add per kernel offset.
"""
from __future__ import annotations
import logging
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from ..autograd import Function, Tensor, as_tensor, get_gradient_rule
from ..core.errors import ShapeError

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-5
MASK_FILL = -1e9


# ---------------------------------------------------------------------------
# window helpers
# ---------------------------------------------------------------------------


def _output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    widths = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    return np.pad(x, widths, mode="constant", constant_values=value)


def _crop(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def _windows(xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C, Ho, Wo, k, k) view."""
    view = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def _scatter_windows(cols: np.ndarray, padded_shape: Tuple[int, ...], kernel: int, stride: int) -> np.ndarray:
    """Adjoint of ``_windows``: sum (N, C, Ho, Wo, k, k) back onto the padded grid."""
    out = np.zeros(padded_shape, dtype=cols.dtype)
    ho, wo = cols.shape[2], cols.shape[3]
    for i in range(kernel):
        for j in range(kernel):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j]
    return out


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


class Conv2dFn(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d expects N x C x H x W input and O x C x k x k weights, got {x.shape}, {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, weights expect {w.shape[1]}")
        kernel = w.shape[2]
        ho = _output_extent(x.shape[2], kernel, stride, padding)
        wo = _output_extent(x.shape[3], kernel, stride, padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d kernel {kernel} does not fit input extent {x.shape[2:]} with padding {padding}")
        self.stride, self.padding, self.kernel = stride, padding, kernel
        self.x_shape, self.w = x.shape, w
        xp = _pad(x, padding)
        self.padded_shape = xp.shape
        self.cols = _windows(xp, kernel, stride)
        out = np.tensordot(self.cols, w, axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2)

    def backward(self, grad: np.ndarray):
        grad_w = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 2, 3]))
        dcols = np.tensordot(grad, self.w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        grad_x = _crop(_scatter_windows(dcols, self.padded_shape, self.kernel, self.stride), self.padding)
        return grad_x, grad_w


class ConvTranspose2dFn(Function):
    """Adjoint of Conv2dFn; weights are laid out Cin x Cout x k x k."""

    def forward(self, y: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
        if y.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv_transpose2d expects 4-D input and weights, got {y.shape}, {w.shape}")
        if y.shape[1] != w.shape[0]:
            raise ShapeError(f"conv_transpose2d channel mismatch: input has {y.shape[1]}, weights expect {w.shape[0]}")
        kernel = w.shape[2]
        n, _, hi, wi = y.shape
        hp = (hi - 1) * stride + kernel
        wp = (wi - 1) * stride + kernel
        if hp - 2 * padding < 1 or wp - 2 * padding < 1:
            raise ShapeError(f"conv_transpose2d padding {padding} leaves an empty output")
        self.stride, self.padding, self.kernel = stride, padding, kernel
        self.y, self.w = y, w
        cols = np.tensordot(y, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        out = _scatter_windows(cols, (n, w.shape[1], hp, wp), kernel, stride)
        return _crop(out, padding)

    def backward(self, grad: np.ndarray):
        cols = _windows(_pad(grad, self.padding), self.kernel, self.stride)
        grad_y = np.tensordot(cols, self.w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        grad_w = np.tensordot(self.y, cols, axes=([0, 2, 3], [0, 2, 3]))
        return grad_y, grad_w


def _add_channel_bias(out: Tensor, bias: Optional[Tensor]) -> Tensor:
    if bias is None:
        return out
    return out + bias.reshape(1, -1, 1, 1)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; extent floor((H + 2p - k) / s) + 1 per axis."""
    return _add_channel_bias(Conv2dFn.apply(x, weight, stride=stride, padding=padding), bias)


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Transposed convolution; extent (H - 1) * s - 2p + k per axis."""
    return _add_channel_bias(ConvTranspose2dFn.apply(x, weight, stride=stride, padding=padding), bias)


# ---------------------------------------------------------------------------
# bilinear resampling
# ---------------------------------------------------------------------------


def interpolation_matrix(size_in: int, size_out: int, dtype: np.dtype = np.float32) -> np.ndarray:
    """Align-corners linear interpolation as a (size_out, size_in) matrix."""
    matrix = np.zeros((size_out, size_in), dtype=np.float64)
    if size_in == 1 or size_out == 1:
        matrix[:, 0] = 1.0
        return matrix.astype(dtype)
    positions = np.arange(size_out) * (size_in - 1) / (size_out - 1)
    lower = np.clip(np.floor(positions).astype(int), 0, size_in - 2)
    frac = positions - lower
    rows = np.arange(size_out)
    matrix[rows, lower] += 1.0 - frac
    matrix[rows, lower + 1] += frac
    return matrix.astype(dtype)


def resize_bilinear(x: Tensor, size: Tuple[int, int]) -> Tensor:
    """Resample the last two axes to ``size`` with align-corners bilinear weights."""
    x = as_tensor(x)
    height, width = int(size[0]), int(size[1])
    if height < 1 or width < 1:
        raise ShapeError(f"resize target must be positive, got {size}")
    if x.shape[-2:] == (height, width):
        return x
    rows = Tensor(interpolation_matrix(x.shape[-2], height, x.dtype))
    cols = Tensor(interpolation_matrix(x.shape[-1], width, x.dtype).T.copy())
    return rows @ x @ cols


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    return resize_bilinear(x, (x.shape[-2] * factor, x.shape[-1] * factor))


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


class MaxPoolFn(Function):
    """Window maximum; ties go to the first index in row-major window order."""

    def forward(self, x: np.ndarray, window: int, stride: int, padding: int) -> np.ndarray:
        xp = _pad(x, padding, value=-np.inf)
        cols = _windows(xp, window, stride)
        n, c, ho, wo = cols.shape[:4]
        flat = cols.reshape(n, c, ho, wo, window * window)
        arg = np.argmax(flat, axis=-1)
        self.window, self.stride, self.padding = window, stride, padding
        self.padded_shape = xp.shape
        self.arg = arg
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray):
        n, c, ho, wo = grad.shape
        rows = np.arange(ho)[:, None] * self.stride + self.arg // self.window
        cols = np.arange(wo)[None, :] * self.stride + self.arg % self.window
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        out = np.zeros(self.padded_shape, dtype=grad.dtype)
        np.add.at(out, (ni, ci, rows, cols), grad)
        return (_crop(out, self.padding),)


class AvgPoolFn(Function):
    """Window mean; zero padding counts toward the divisor."""

    def forward(self, x: np.ndarray, window: int, stride: int, padding: int) -> np.ndarray:
        xp = _pad(x, padding)
        self.window, self.stride, self.padding = window, stride, padding
        self.padded_shape = xp.shape
        return _windows(xp, window, stride).mean(axis=(4, 5))

    def backward(self, grad: np.ndarray):
        area = self.window * self.window
        cols = np.broadcast_to((grad / area)[..., None, None], grad.shape + (self.window, self.window))
        return (_crop(_scatter_windows(cols, self.padded_shape, self.window, self.stride), self.padding),)


def pool(
    x: Tensor,
    mode: str,
    window: int = 2,
    stride: Optional[int] = None,
    padding: int = 0,
) -> Tensor:
    """Max, average or global-average pooling.

    ``global_avg`` ignores the window and returns an (N, C) tensor.
    """
    x = as_tensor(x)
    if mode == "global_avg":
        return x.mean(axis=(2, 3))
    if mode not in ("max", "avg"):
        raise ValueError(f"Unknown pooling mode '{mode}'")
    stride = window if stride is None else stride
    height, width = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    if window > height or window > width:
        raise ShapeError(f"pooling window {window} exceeds input extent {x.shape[2:]}")
    fn = MaxPoolFn if mode == "max" else AvgPoolFn
    return fn.apply(x, window=window, stride=stride, padding=padding)


# ---------------------------------------------------------------------------
# normalization and dropout
# ---------------------------------------------------------------------------

NORM_AXES = {"instance": (2, 3), "layer": (-1,)}


def norm_axes(mode: str, ndim: int) -> Tuple[int, ...]:
    if mode == "batch":
        return (0, 2, 3) if ndim == 4 else (0,)
    if mode not in NORM_AXES:
        raise ValueError(f"Unknown normalization mode '{mode}'")
    return NORM_AXES[mode]


def _affine_shape(mode: str, ndim: int, features: int) -> Tuple[int, ...]:
    if mode == "layer":
        return (features,)
    shape = [1] * ndim
    shape[1] = features
    return tuple(shape)


def normalize(
    x: Tensor,
    mode: str,
    weight: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    eps: float = NORM_EPS,
    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tensor:
    """(x - mean) / sqrt(var + eps), then scale and shift.

    ``stats`` supplies fixed (mean, var) per feature, as batch norm uses in
    evaluation mode; otherwise the statistics are taken over the mode's axes.
    """
    x = as_tensor(x)
    axes = norm_axes(mode, x.ndim)
    if stats is not None:
        features = x.shape[-1] if mode == "layer" else x.shape[1]
        shape = _affine_shape(mode, x.ndim, features)
        mean = Tensor(np.asarray(stats[0], dtype=x.dtype).reshape(shape))
        var = Tensor(np.asarray(stats[1], dtype=x.dtype).reshape(shape))
        centered = x - mean
    else:
        mean = x.mean(axis=axes, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
    out = centered * (var + eps) ** -0.5
    if weight is not None:
        out = out * weight.reshape(_affine_shape(mode, x.ndim, weight.size))
    if bias is not None:
        out = out + bias.reshape(_affine_shape(mode, x.ndim, bias.size))
    return out


def dropout(x: Tensor, rate: float, training: bool, generator: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; the identity outside training or at rate 0."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    generator = generator if generator is not None else np.random.default_rng()
    keep = generator.random(x.shape) >= rate
    return x * Tensor((keep / (1.0 - rate)).astype(x.dtype))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def _activation_forward(kind: str, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Value and local derivative of an elementwise activation."""
    if kind == "relu":
        return np.maximum(x, 0), (x > 0).astype(x.dtype)
    if kind == "leaky_relu":
        positive = x > 0
        return np.where(positive, x, LEAKY_SLOPE * x), np.where(positive, 1.0, LEAKY_SLOPE).astype(x.dtype)
    if kind == "sigmoid":
        s = expit(x)
        return s, s * (1.0 - s)
    if kind == "gelu":
        cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return x * cdf, cdf + x * pdf
    if kind == "tanh":
        t = np.tanh(x)
        return t, 1.0 - t * t
    if kind == "softplus":
        return np.logaddexp(0.0, x), expit(x)
    raise ValueError(f"Unknown activation '{kind}'")


ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "gelu", "tanh", "softplus")


class ActivationFn(Function):
    """Elementwise activation whose backward consults the active gradient rules."""

    def forward(self, x: np.ndarray, kind: str) -> np.ndarray:
        self.kind = kind
        value, self.local = _activation_forward(kind, x)
        return value

    def backward(self, grad: np.ndarray):
        rule = get_gradient_rule(self.kind)
        if rule is not None:
            return (rule(self.local, grad),)
        return (grad * self.local,)


def activation(x: Tensor, kind: str) -> Tensor:
    return ActivationFn.apply(x, kind=str(kind))


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def leaky_relu(x: Tensor) -> Tensor:
    return activation(x, "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def gelu(x: Tensor) -> Tensor:
    return activation(x, "gelu")


def tanh(x: Tensor) -> Tensor:
    return activation(x, "tanh")


def softplus(x: Tensor) -> Tensor:
    return activation(x, "softplus")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# linear and attention
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ W + b with W laid out in_features x out_features."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear expects {weight.shape[0]} input features, got {x.shape[-1]}")
    out = x @ weight
    return out if bias is None else out + bias


def _split_heads(t: Tensor, heads: int) -> Tensor:
    batch, length, width = t.shape
    return t.reshape(batch, length, heads, width // heads).transpose(0, 2, 1, 3)


def attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    heads: int,
    projections: Sequence[Tuple[Tensor, Optional[Tensor]]],
    key_padding_mask: Optional[np.ndarray] = None,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """Multi-head scaled dot-product attention over (B, L, D) inputs.

    ``projections`` holds (weight, bias) pairs for the query, key, value and
    output maps. ``key_padding_mask`` is a (B, Lk) boolean array, True where
    the key is padding; those keys receive zero weight.
    """
    queries, keys, values = as_tensor(queries), as_tensor(keys), as_tensor(values)
    width = queries.shape[-1]
    if width % heads != 0:
        raise ShapeError(f"embedding width {width} is not divisible by {heads} heads")
    (wq, bq), (wk, bk), (wv, bv), (wo, bo) = projections
    head_dim = width // heads
    q = _split_heads(linear(queries, wq, bq), heads)
    k = _split_heads(linear(keys, wk, bk), heads)
    v = _split_heads(linear(values, wv, bv), heads)

    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(head_dim))
    if key_padding_mask is not None:
        mask = np.asarray(key_padding_mask, dtype=bool)
        if mask.shape != (keys.shape[0], keys.shape[1]):
            raise ShapeError(f"key_padding_mask must have shape {(keys.shape[0], keys.shape[1])}, got {mask.shape}")
        fill = np.where(mask, MASK_FILL, 0.0).astype(scores.dtype)[:, None, None, :]
        scores = scores + Tensor(fill)
    weights = softmax(scores, axis=-1)
    mixed = (weights @ v).transpose(0, 2, 1, 3)
    batch, length = mixed.shape[0], mixed.shape[1]
    out = linear(mixed.reshape(batch, length, width), wo, bo)
    if return_weights:
        return out, weights
    return out
