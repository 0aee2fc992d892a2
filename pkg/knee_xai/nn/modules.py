"""Layer objects holding parameters, buffers, child modules and taps."""
from __future__ import annotations
import logging
from collections import OrderedDict
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..autograd import Tensor, no_grad
from ..core.errors import ConfigError, ShapeError
from ..core.schemas import LayerKind, LayerSpec
from . import functional as F

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A leaf tensor that a module owns and an optimizer updates."""

    def __init__(self, data: Any, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Base class for layers and models.

    Attribute assignment sorts values into parameters, child modules and
    plain attributes; ``register_buffer`` stores non-trainable arrays such as
    batch-norm running statistics.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_taps", [])
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value: Any) -> None:
        for registry in (self._parameters, self._modules, self._buffers):
            registry.pop(name, None)
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        else:
            object.__setattr__(self, name, value)

    def __getattr__(self, name: str) -> Any:
        for registry in ("_parameters", "_modules", "_buffers"):
            values = self.__dict__.get(registry)
            if values is not None and name in values:
                return values[name]
        raise AttributeError(f"'{type(self).__name__}' has no attribute '{name}'")

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value)

    # -- forward -----------------------------------------------------------
    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        out = self.forward(*args, **kwargs)
        for handle in list(self._taps):
            handle.capture(out)
        return out

    # -- traversal ---------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        for path, module in self.named_modules():
            for name, param in module._parameters.items():
                yield (f"{path}.{name}" if path else name), param

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for path, module in self.named_modules():
            for name, buf in module._buffers.items():
                yield (f"{path}.{name}" if path else name), buf

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- modes -------------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # -- state -------------------------------------------------------------
    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, in registration order, as array copies."""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, param in self.named_parameters():
            state[name] = param.data.copy()
        for name, buf in self.named_buffers():
            state[name] = np.array(buf, copy=True)
        return state

    def _owner(self, path: str) -> Tuple["Module", str]:
        *parents, leaf = path.split(".")
        module = self
        for part in parents:
            if part not in module._modules:
                raise ConfigError(f"No submodule '{part}' on the way to '{path}'")
            module = module._modules[part]
        return module, leaf

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if strict and (missing or unexpected):
            raise ConfigError(f"State mismatch; missing: {missing}, unexpected: {unexpected}")
        for name, value in state.items():
            if name not in own:
                continue
            value = np.asarray(value)
            if value.shape != own[name].shape:
                raise ShapeError(f"'{name}' has shape {value.shape}, expected {own[name].shape}")
            module, leaf = self._owner(name)
            if leaf in module._parameters:
                param = module._parameters[leaf]
                param.data = value.astype(param.dtype, copy=True)
            else:
                module._buffers[leaf] = value.astype(module._buffers[leaf].dtype, copy=True)

    def to_dtype(self, dtype: Any) -> "Module":
        for _, module in self.named_modules():
            for param in module._parameters.values():
                param.data = param.data.astype(dtype)
            for name, buf in list(module._buffers.items()):
                if buf.dtype.kind == "f":
                    module._buffers[name] = buf.astype(dtype)
        return self

    @contextmanager
    def substitute(self, name: str, tensor: Tensor) -> Iterator[None]:
        """Temporarily swap parameter ``name`` for ``tensor`` (finite differences over weights)."""
        module, leaf = self._owner(name)
        if leaf not in module._parameters:
            raise ConfigError(f"'{name}' is not a parameter")
        original = module._parameters[leaf]
        module._parameters[leaf] = tensor
        try:
            yield
        finally:
            module._parameters[leaf] = original


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _rng(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1, padding: int = 0,
                 bias: bool = True, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.stride, self.padding = stride, padding
        std = np.sqrt(2.0 / (in_channels * kernel * kernel))
        self.weight = Parameter(_rng(rng).normal(0.0, std, (out_channels, in_channels, kernel, kernel)).astype(np.float32))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1, padding: int = 0,
                 bias: bool = True, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.stride, self.padding = stride, padding
        std = np.sqrt(2.0 / (in_channels * kernel * kernel))
        self.weight = Parameter(_rng(rng).normal(0.0, std, (in_channels, out_channels, kernel, kernel)).astype(np.float32))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_rng(rng).uniform(-bound, bound, (in_features, out_features)).astype(np.float32))
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class _Norm(Module):
    mode = "layer"

    def __init__(self, features: int, affine: bool = True):
        super().__init__()
        self.features = features
        self.weight = Parameter(np.ones(features, dtype=np.float32)) if affine else None
        self.bias = Parameter(np.zeros(features, dtype=np.float32)) if affine else None

    def forward(self, x: Tensor) -> Tensor:
        return F.normalize(x, self.mode, self.weight, self.bias)


class InstanceNorm(_Norm):
    mode = "instance"


class LayerNorm(_Norm):
    mode = "layer"


class BatchNorm(_Norm):
    """Batch statistics in training (running averages updated with momentum), running statistics in eval."""

    mode = "batch"

    def __init__(self, features: int, momentum: float = 0.1):
        super().__init__(features)
        self.momentum = momentum
        self.register_buffer("running_mean", np.zeros(features, dtype=np.float32))
        self.register_buffer("running_var", np.ones(features, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        if not self.training:
            stats = (self.running_mean, self.running_var)
            return F.normalize(x, "batch", self.weight, self.bias, stats=stats)
        axes = F.norm_axes("batch", x.ndim)
        count = int(np.prod([x.shape[a] for a in axes]))
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes) * (count / max(count - 1, 1))
        m = self.momentum
        self._buffers["running_mean"] = ((1 - m) * self.running_mean + m * mean).astype(self.running_mean.dtype)
        self._buffers["running_var"] = ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype)
        return F.normalize(x, "batch", self.weight, self.bias)


class Dropout(Module):
    def __init__(self, rate: float, generator: Optional[np.random.Generator] = None):
        super().__init__()
        self.rate = rate
        self.generator = generator

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.rate, self.training, self.generator)


class Activation(Module):
    def __init__(self, kind: str):
        super().__init__()
        self.kind = str(getattr(kind, "value", kind))

    def forward(self, x: Tensor) -> Tensor:
        return F.activation(x, self.kind)


class Pool(Module):
    def __init__(self, mode: str, window: int = 2, stride: Optional[int] = None, padding: int = 0):
        super().__init__()
        self.mode, self.window, self.stride, self.padding = mode, window, stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return F.pool(x, self.mode, self.window, self.stride, self.padding)


class Upsample(Module):
    def __init__(self, factor: int):
        super().__init__()
        if factor < 1:
            raise ValueError(f"upsampling factor must be >= 1, got {factor}")
        self.factor = factor

    def forward(self, x: Tensor) -> Tensor:
        return F.upsample_bilinear(x, self.factor)


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class MultiHeadAttention(Module):
    """Self/cross attention with learned query, key, value and output projections."""

    def __init__(self, width: int, heads: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if width % heads != 0:
            raise ConfigError(f"{heads} heads do not divide embedding width {width}")
        rng = _rng(rng)
        self.heads = heads
        self.query = Linear(width, width, rng=rng)
        self.key = Linear(width, width, rng=rng)
        self.value = Linear(width, width, rng=rng)
        self.out = Linear(width, width, rng=rng)

    def forward(self, queries: Tensor, keys: Optional[Tensor] = None, values: Optional[Tensor] = None,
                key_padding_mask: Optional[np.ndarray] = None) -> Tensor:
        keys = queries if keys is None else keys
        values = keys if values is None else values
        projections = [(m.weight, m.bias) for m in (self.query, self.key, self.value, self.out)]
        return F.attention(queries, keys, values, self.heads, projections, key_padding_mask)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for index, layer in enumerate(layers):
            setattr(self, str(index), layer)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._modules.values())

    def __len__(self) -> int:
        return len(self._modules)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self._modules.values():
            x = layer(x)
        return x


def build_layer(spec: LayerSpec, rng: Optional[np.random.Generator] = None,
                generator: Optional[np.random.Generator] = None) -> Module:
    """Instantiate the layer a LayerSpec describes.

    Pooling uses ``kernel`` as the window; bilinear upsampling uses ``stride``
    as its factor; normalizations use ``out_channels`` as the feature count.
    """
    kind = spec.kind
    if kind == LayerKind.CONV:
        return Conv2d(spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.padding, rng=rng)
    if kind == LayerKind.CONV_TRANSPOSED:
        return ConvTranspose2d(spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.padding, rng=rng)
    if kind == LayerKind.UPSAMPLE_BILINEAR:
        return Upsample(spec.stride)
    if kind == LayerKind.POOL_MAX:
        return Pool("max", spec.kernel, spec.stride, spec.padding)
    if kind == LayerKind.POOL_AVG:
        return Pool("avg", spec.kernel, spec.stride, spec.padding)
    if kind == LayerKind.POOL_GLOBAL_AVG:
        return Pool("global_avg")
    if kind == LayerKind.BATCH_NORM:
        return BatchNorm(spec.out_channels)
    if kind == LayerKind.INSTANCE_NORM:
        return InstanceNorm(spec.out_channels)
    if kind == LayerKind.LAYER_NORM:
        return LayerNorm(spec.out_channels)
    if kind == LayerKind.DROPOUT:
        return Dropout(spec.dropout_rate, generator)
    if kind == LayerKind.LINEAR:
        return Linear(spec.in_channels, spec.out_channels, rng=rng)
    if kind == LayerKind.ATTENTION:
        return MultiHeadAttention(spec.out_channels, spec.heads, rng=rng)
    if kind == LayerKind.ACTIVATION:
        return Activation(spec.activation_kind.value)
    raise ConfigError(f"Unsupported layer kind '{kind}'")
