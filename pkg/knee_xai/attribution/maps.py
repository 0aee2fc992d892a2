"""Attribution map container and normalization."""
from __future__ import annotations
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..core.schemas import AttributionMethod


@dataclass
class AttributionMap:
    """Per-slice heatmaps at input resolution.

    ``per_slice`` has shape (s, H, W). ``coarse`` keeps Grad-CAM's
    tap-resolution map before upsampling.
    """

    method: AttributionMethod
    per_slice: np.ndarray
    value_range: Tuple[float, float]
    coarse: Optional[np.ndarray] = None

    @classmethod
    def from_array(cls, method: AttributionMethod, values: np.ndarray,
                   coarse: Optional[np.ndarray] = None) -> "AttributionMap":
        values = np.asarray(values)
        return cls(
            method=AttributionMethod(method),
            per_slice=values,
            value_range=(float(values.min()), float(values.max())),
            coarse=coarse,
        )

    @property
    def num_slices(self) -> int:
        return int(self.per_slice.shape[0])

    def normalized(self, per_volume: bool = False) -> np.ndarray:
        return normalize_map(self.per_slice, per_volume=per_volume)


def _min_max(values: np.ndarray) -> np.ndarray:
    low, high = float(values.min()), float(values.max())
    if high - low <= 0.0:
        return np.zeros_like(values, dtype=np.float64)
    return (values - low) / (high - low)


def normalize_map(values: np.ndarray, per_volume: bool = False) -> np.ndarray:
    """Min-max scale to [0, 1] per slice (or over the whole volume); constant input maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    if per_volume or values.ndim < 3:
        return _min_max(values)
    return np.stack([_min_max(s) for s in values])
