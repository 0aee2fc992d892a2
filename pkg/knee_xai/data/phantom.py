"""Synthetic sagittal knee phantoms with ground-truth tear masks.

Each slice shows a soft-tissue ellipse, femur and tibia ellipses, and two dark
wedge-shaped meniscus horns on the joint line. A positive volume carries a
disk-shaped notch in one horn across a contiguous run of slices. Its default
signal is brighter than the dark horn and darker than bone.
"""
from __future__ import annotations
import logging
from typing import Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from ..core.schemas import PhantomParams
from .volume import Volume

logger = logging.getLogger("KneeXAI.Phantom")

SOFT_TISSUE = 0.35
FEMUR = 0.62
TIBIA = 0.56
MENISCUS = 0.08
JOINT_LINE = 0.05
HORN_INNER, HORN_OUTER = 0.28, 0.68
HORN_HALF_HEIGHT = 0.09
EDGE_BLUR = 0.7


def _ellipse(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _horns(yy: np.ndarray, xx: np.ndarray, joint: float, half_height: float) -> np.ndarray:
    """Two triangular wedges thinning toward the joint center."""
    reach = np.abs(xx)
    inside = (reach >= HORN_INNER) & (reach <= HORN_OUTER)
    thickness = half_height * (reach - HORN_INNER) / (HORN_OUTER - HORN_INNER)
    return inside & (np.abs(yy - joint) <= thickness)


def _anatomy(edge: int, depth: float, jitter: np.ndarray) -> np.ndarray:
    """One noise-free slice; ``depth`` in [-1, 1] is the slice's position across the knee."""
    coords = np.linspace(-1.0, 1.0, edge)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    shrink = np.sqrt(1.0 - 0.45 * depth * depth)
    fade = 1.0 - 0.25 * abs(depth)
    dy, dx, scale, contrast = jitter
    image = np.zeros((edge, edge), dtype=np.float64)
    image[_ellipse(yy, xx, dy, dx, 0.88 * shrink * scale, 0.78 * shrink * scale)] = SOFT_TISSUE * fade + contrast
    image[_ellipse(yy, xx, -0.47 + dy, dx, 0.38 * shrink * scale, 0.5 * shrink * scale)] = FEMUR * fade + contrast
    image[_ellipse(yy, xx, 0.52 + dy, dx, 0.32 * shrink * scale, 0.5 * shrink * scale)] = TIBIA * fade + contrast
    image[_horns(yy, xx - dx, JOINT_LINE + dy, HORN_HALF_HEIGHT * shrink)] = MENISCUS
    return gaussian_filter(image, EDGE_BLUR)


def lesion_center(edge: int, side: int, jitter: np.ndarray) -> Tuple[float, float]:
    """Pixel (row, col) of a lesion in the middle of the left (side=-1) or right (side=+1) horn."""
    dy, dx = jitter[0], jitter[1]
    reach = 0.5 * (HORN_INNER + HORN_OUTER) + 0.1
    to_pixel = (edge - 1) / 2.0
    return ((JOINT_LINE + dy + 1.0) * to_pixel, (side * reach + dx + 1.0) * to_pixel)


def _disk(edge: int, center: Tuple[float, float], radius: float) -> np.ndarray:
    rows, cols = np.ogrid[:edge, :edge]
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius * radius


def generate_phantom(params: PhantomParams, index: int) -> Volume:
    """Volume ``index`` of the phantom family; a pure function of (params.seed, index)."""
    rng = np.random.default_rng([params.seed, index])
    positive = bool(rng.random() < params.lesion_probability)
    s = int(rng.integers(params.s_range[0], params.s_range[1] + 1))
    edge = params.edge
    jitter = np.array([
        rng.uniform(-0.04, 0.04),
        rng.uniform(-0.04, 0.04),
        rng.uniform(0.95, 1.05),
        rng.uniform(-0.04, 0.04),
    ])

    depths = np.linspace(-0.9, 0.9, s) if s > 1 else np.zeros(1)
    data = np.stack([_anatomy(edge, d, jitter) for d in depths])
    mask = np.zeros(data.shape, dtype=bool)

    if positive:
        side = 1 if rng.random() < 0.5 else -1
        radius = float(rng.integers(params.lesion_size[0], params.lesion_size[1] + 1))
        run = int(rng.integers(max(1, s // 4), max(1, s // 2) + 1))
        start = int(rng.integers(0, s - run + 1))
        disk = _disk(edge, lesion_center(edge, side, jitter), radius)
        mask[start:start + run] = disk
        data[mask] = params.lesion_intensity

    if params.noise_level > 0:
        data = data + rng.normal(0.0, params.noise_level, data.shape)
    data = np.clip(data, 0.0, 1.0).astype(np.float32)
    label = 1 if positive else 0
    return Volume(patient_id=f"phantom-{params.seed}-{index:05d}", data=data, label=label, roi_mask=mask)
