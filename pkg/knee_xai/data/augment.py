"""Random rotation, shift and horizontal flip applied identically to every slice."""
from __future__ import annotations
import math
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import affine_transform

from ..core.schemas import AugmentParams
from .volume import Volume

REFERENCE_EDGE = 256


def _resample(stack: np.ndarray, angle_deg: float, shift: Tuple[float, float], order: int) -> np.ndarray:
    """Rotate each (H, W) slice about its center by ``angle_deg``, then shift by (rows, cols) pixels."""
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    inverse = np.array([[cos, sin], [-sin, cos]])
    center = (np.array(stack.shape[1:], dtype=np.float64) - 1.0) / 2.0
    offset2 = center - inverse @ (center + np.asarray(shift, dtype=np.float64))
    matrix = np.eye(3)
    matrix[1:, 1:] = inverse
    offset = np.concatenate([[0.0], offset2])
    return affine_transform(stack, matrix, offset=offset, order=order, mode="constant", cval=0.0)


def apply_transform(volume: Volume, angle_deg: float = 0.0, shift: Tuple[float, float] = (0.0, 0.0),
                    flip: bool = False) -> Volume:
    """Rotate about the slice center, then shift, then flip left-right.

    Intensities use bilinear resampling and masks nearest-neighbour; pixels
    arriving from outside the frame are 0.
    """
    data = volume.data
    mask = volume.roi_mask
    if angle_deg != 0.0 or shift[0] != 0.0 or shift[1] != 0.0:
        data = _resample(data.astype(np.float64), angle_deg, shift, order=1)
        data = np.clip(data, 0.0, 1.0).astype(volume.data.dtype)
        if mask is not None:
            mask = _resample(mask.astype(np.float64), angle_deg, shift, order=0) > 0.5
    if flip:
        data = data[:, :, ::-1].copy()
        if mask is not None:
            mask = mask[:, :, ::-1].copy()
    return Volume(patient_id=volume.patient_id, data=data, label=volume.label, roi_mask=mask, plane=volume.plane)


def augment(volume: Volume, params: Optional[AugmentParams] = None, seed: int = 0) -> Volume:
    """One random draw of rotation, shift (scaled by edge / 256) and flip for the whole volume."""
    params = params or AugmentParams()
    rng = np.random.default_rng(seed)
    angle = float(rng.uniform(-params.max_rotation_deg, params.max_rotation_deg))
    limit = params.max_shift_px * volume.edge / REFERENCE_EDGE
    shift = (float(rng.uniform(-limit, limit)), float(rng.uniform(-limit, limit)))
    flip = bool(rng.random() < params.flip_probability)
    return apply_transform(volume, angle, shift, flip)
