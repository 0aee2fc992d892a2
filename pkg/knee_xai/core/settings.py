"""Process-level settings for knee_xai."""
from __future__ import annotations
import os
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class HarnessSettings:
    """Settings resolved from the environment.

    Only the default output root is configurable this way; everything that
    affects results lives in the experiment config.
    """

    def __init__(self):
        self.output_root = Path(os.getenv("KNEE_XAI_OUTPUT_ROOT", "runs"))


# Global settings instance
_settings: Optional[HarnessSettings] = None


def get_settings() -> HarnessSettings:
    """Get or create the settings instance."""
    global _settings
    if _settings is None:
        _settings = HarnessSettings()
    return _settings


def reset_settings() -> None:
    """Drop the cached instance so the environment is read again."""
    global _settings
    _settings = None
