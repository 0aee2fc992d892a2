"""One patient's scan."""
from __future__ import annotations
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from ..core.errors import ShapeError


@dataclass
class Volume:
    """Grayscale volume of shape (s, H, W) with intensities in [0, 1].

    ``roi_mask`` exists for synthetic volumes only. A nonempty mask requires
    ``label`` 1; a positive volume may carry an empty mask once augmentation
    has moved its lesion out of the frame.
    """

    patient_id: str
    data: np.ndarray
    label: Optional[int] = None
    roi_mask: Optional[np.ndarray] = None
    plane: Literal["sagittal"] = "sagittal"

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeError(f"Volume data must be (s, H, W), got {self.data.shape}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError(f"Volume {self.patient_id} has intensities outside [0, 1]")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.roi_mask is not None:
            self.roi_mask = np.asarray(self.roi_mask).astype(bool)
            if self.roi_mask.shape != self.data.shape:
                raise ShapeError(f"Mask {self.roi_mask.shape} does not match data {self.data.shape}")
            if self.label == 0 and self.roi_mask.any():
                raise ValueError(f"Volume {self.patient_id}: a lesion mask on a label-0 volume")

    @property
    def num_slices(self) -> int:
        return int(self.data.shape[0])

    @property
    def edge(self) -> int:
        return int(self.data.shape[1])

    def summary(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "plane": self.plane,
            "shape": list(self.data.shape),
            "label": self.label,
            "lesion_pixels": int(self.roi_mask.sum()) if self.roi_mask is not None else None,
        }
