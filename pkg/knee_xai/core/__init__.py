from .errors import ConfigError, ShapeError
from .utils import load_json_file, save_json_file, setup_logger

__all__ = [
    "Orchestrator",
    "ConfigError",
    "ShapeError",
    "load_json_file",
    "save_json_file",
    "setup_logger",
]


def __getattr__(name: str):
    # the orchestrator pulls in the model stack, which itself imports core
    if name == "Orchestrator":
        from .orchestrator import Orchestrator

        return Orchestrator
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
