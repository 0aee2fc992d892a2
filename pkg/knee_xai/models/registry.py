"""Architecture name -> builder mapping."""
from __future__ import annotations
import logging
from typing import Callable, Dict

from ..core.errors import ConfigError
from ..core.schemas import Architecture

logger = logging.getLogger("KneeXAI.Models")

_BUILDERS: Dict[Architecture, Callable] = {}


def register_model(architecture: Architecture) -> Callable[[Callable], Callable]:
    """Class decorator adding a model family to the zoo."""

    def decorator(builder: Callable) -> Callable:
        if architecture in _BUILDERS:
            raise ConfigError(f"Architecture '{architecture.value}' registered twice")
        _BUILDERS[architecture] = builder
        return builder

    return decorator


def get_builder(architecture: Architecture) -> Callable:
    try:
        return _BUILDERS[Architecture(architecture)]
    except (KeyError, ValueError):
        available = ", ".join(sorted(a.value for a in _BUILDERS))
        raise ConfigError(f"No model registered for '{architecture}'. Available: {available}")


def registered_architectures() -> list[str]:
    return sorted(a.value for a in _BUILDERS)
