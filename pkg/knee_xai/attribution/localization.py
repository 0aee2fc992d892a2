"""How much of an attribution map's mass falls inside a ground-truth mask."""
from __future__ import annotations

import numpy as np

from ..core.errors import ShapeError


def localization_energy(heatmap: np.ndarray, mask: np.ndarray) -> float:
    """(sum of map inside mask) / (sum of map), after shifting the map by its minimum.

    An all-zero shifted map carries no information and scores the mask's
    area fraction.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if heatmap.shape != mask.shape:
        raise ShapeError(f"Map {heatmap.shape} and mask {mask.shape} differ in extent")
    if not mask.any():
        raise ValueError("localization_energy needs a nonempty mask")
    shifted = heatmap - heatmap.min()
    total = shifted.sum()
    if total <= 0.0:
        return float(mask.mean())
    return float(shifted[mask].sum() / total)


def lesion_slices(mask: np.ndarray) -> np.ndarray:
    """Indices of slices whose mask is nonempty."""
    mask = np.asarray(mask).astype(bool)
    return np.flatnonzero(mask.reshape(mask.shape[0], -1).any(axis=1))


def volume_localization_energy(per_slice: np.ndarray, mask: np.ndarray) -> float:
    """Energy over the slices that contain the lesion."""
    keep = lesion_slices(mask)
    if keep.size == 0:
        raise ValueError("mask is empty on every slice")
    return localization_energy(np.asarray(per_slice)[keep], np.asarray(mask)[keep])


def mask_area_fraction(mask: np.ndarray) -> float:
    """Area fraction of the mask over its lesion slices."""
    keep = lesion_slices(mask)
    if keep.size == 0:
        raise ValueError("mask is empty on every slice")
    return float(np.asarray(mask).astype(bool)[keep].mean())


def permuted_mask(mask: np.ndarray, seed: int = 0) -> np.ndarray:
    """Shuffle mask pixels within each slice; the per-slice area is kept."""
    mask = np.asarray(mask).astype(bool)
    rng = np.random.default_rng(seed)
    flat = mask.reshape(mask.shape[0], -1).copy()
    for row in flat:
        rng.shuffle(row)
    return flat.reshape(mask.shape)
