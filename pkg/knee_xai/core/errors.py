"""Error kinds raised across knee_xai.

Every class derives from ``ValueError`` or ``RuntimeError`` so callers can keep
catching the built-in classes.
"""
from __future__ import annotations
from typing import Iterable, Optional


class GraphError(RuntimeError):
    """Invalid use of the gradient graph (non-scalar loss, detached graph)."""


class NonFiniteError(RuntimeError):
    """A function value or loss that is NaN or infinite."""


class NonFiniteLossError(NonFiniteError):
    """Non-finite training loss, carrying the optimizer step that produced it."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"Non-finite loss {value} at step {step}")


class ShapeError(ValueError):
    """Extent or channel mismatch between tensors or against a layer."""


class ConfigError(ValueError):
    """Internally inconsistent configuration or checkpoint/config mismatch."""


class UnknownLayerError(ValueError):
    """Tap requested on a layer name the model does not have."""

    def __init__(self, layer_name: str, available: Iterable[str]):
        self.layer_name = layer_name
        self.available = sorted(available)
        super().__init__(
            f"Unknown layer '{layer_name}'. Available: {', '.join(self.available)}"
        )


class TapNotPopulatedError(RuntimeError):
    """Tap read before a forward (and backward) pass filled it."""


class TargetMismatchError(ValueError):
    """Attribution target incompatible with the model family."""


class ContainerError(ValueError):
    """Base class for volume container (NPY) failures."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} ({path})" if path else message)


class BadMagicError(ContainerError):
    """File does not start with the NPY magic string."""


class UnsupportedDtypeError(ContainerError):
    """dtype outside the supported little-endian f4 / f8 / u1 set."""


class HeaderError(ContainerError):
    """Header present but malformed."""


class TruncatedPayloadError(ContainerError):
    """Payload shorter than the header's shape and dtype require."""


class PartialOutputError(RuntimeError):
    """Writing run outputs failed midway (disk full, permissions); earlier files may exist."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} ({path})" if path else message)


class ManifestError(ValueError):
    """Dataset manifest with missing columns, bad labels or repeated patient ids."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} ({path})" if path else message)
