"""Named-layer taps: capture a layer's activations and the gradient flowing into them."""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

from ..core.errors import TapNotPopulatedError, UnknownLayerError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class TapRecord:
    """Activations A_k of one layer and, after backward, dy/dA_k.

    With slices run as a batch, both tensors have shape (s, C, H', W').
    """

    layer_name: str
    activations: Optional[Tensor] = None
    _source: Optional[Tensor] = field(default=None, repr=False)

    @property
    def upstream_grad(self) -> Optional[Tensor]:
        if self._source is None or self._source.grad is None:
            return None
        return Tensor(self._source.grad)

    @property
    def populated(self) -> bool:
        return self.activations is not None and self.upstream_grad is not None

    def require(self) -> "TapRecord":
        if self.activations is None:
            raise TapNotPopulatedError(f"Tap on '{self.layer_name}' has no activations; run a forward pass")
        if self.upstream_grad is None:
            raise TapNotPopulatedError(f"Tap on '{self.layer_name}' has no gradient; run a backward pass")
        return self


class TapHandle:
    """Registration of one tap on one module; ``remove()`` detaches it."""

    def __init__(self, module: Any, layer_name: str):
        self.module = module
        self.record = TapRecord(layer_name=layer_name)

    def capture(self, output: Tensor) -> None:
        output.retain_grad()
        self.record.activations = output
        self.record._source = output

    def remove(self) -> None:
        if self in self.module._taps:
            self.module._taps.remove(self)

    def __enter__(self) -> "TapHandle":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.remove()


def register_tap(model: Any, layer_name: str) -> TapHandle:
    """Attach a tap to the submodule called ``layer_name``.

    Every later forward pass overwrites the record's activations; a backward
    pass through them fills ``upstream_grad``. Several taps may coexist.
    """
    modules = dict(model.named_modules())
    modules.pop("", None)
    if layer_name not in modules:
        raise UnknownLayerError(layer_name, modules.keys())
    module = modules[layer_name]
    handle = TapHandle(module, layer_name)
    module._taps.append(handle)
    logger.debug(f"Tap registered on '{layer_name}' ({type(module).__name__})")
    return handle
