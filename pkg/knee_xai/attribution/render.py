"""Overlay rasters and method-comparison figures."""
from __future__ import annotations
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from ..core.errors import ShapeError  # noqa: E402
from ..core.schemas import AttributionMethod, SmoothGradParams  # noqa: E402
from .maps import normalize_map  # noqa: E402
from .methods import TapLike, attribute  # noqa: E402

logger = logging.getLogger("KneeXAI.Attribution")

BLEND_WEIGHT = 0.4
COLORMAP = "viridis"


def overlay(heatmap: np.ndarray, image: np.ndarray, normalized: bool = False) -> np.ndarray:
    """Blend a heatmap over a grayscale slice; returns an (H, W, 3) uint8 raster.

    Each pixel mixes toward the colormap by BLEND_WEIGHT times its normalized
    heat, so a zero or constant map leaves the grayscale base unchanged.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if heatmap.shape != image.shape or heatmap.ndim != 2:
        raise ShapeError(f"overlay needs matching 2-D map and image, got {heatmap.shape} and {image.shape}")
    heat = heatmap if normalized else normalize_map(heatmap)
    colors = matplotlib.colormaps[COLORMAP](heat)[..., :3]
    base = np.repeat(np.clip(image, 0.0, 1.0)[..., None], 3, axis=2)
    alpha = BLEND_WEIGHT * heat[..., None]
    blended = (1.0 - alpha) * base + alpha * colors
    return np.round(blended * 255.0).astype(np.uint8)


def save_png(raster: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(raster, dtype=np.uint8)).save(path, format="PNG")
    return path


COMPARISON_METHODS = (
    AttributionMethod.SALIENCY,
    AttributionMethod.SMOOTHGRAD,
    AttributionMethod.GUIDED_BACKPROP,
    AttributionMethod.GRADCAM,
    AttributionMethod.GUIDED_GRADCAM,
)


def compare_methods(
    model: Any,
    volumes: Sequence[Any],
    slice_indices: Sequence[int],
    output_path: str | Path,
    tap: TapLike = None,
    smoothgrad_params: Optional[SmoothGradParams] = None,
    seed: int = 0,
) -> Dict[str, list]:
    """Figure with one row per scan: the slice, then an overlay for each of the five methods."""
    rows = len(volumes)
    fig, axes = plt.subplots(rows, 1 + len(COMPARISON_METHODS),
                             figsize=(2.2 * (1 + len(COMPARISON_METHODS)), 2.4 * rows), squeeze=False)
    maps: Dict[str, list] = {m.value: [] for m in COMPARISON_METHODS}
    for row, (volume, index) in enumerate(zip(volumes, slice_indices)):
        data = np.asarray(getattr(volume, "data", volume))
        axes[row][0].imshow(data[index], cmap="gray", vmin=0.0, vmax=1.0)
        axes[row][0].set_title("slice" if row == 0 else "")
        for col, method in enumerate(COMPARISON_METHODS, start=1):
            result = attribute(model, volume, method, tap=tap, smoothgrad_params=smoothgrad_params, seed=seed)
            maps[method.value].append(result)
            axes[row][col].imshow(overlay(result.per_slice[index], data[index]))
            if row == 0:
                axes[row][col].set_title(method.value.replace("_", " "))
    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(output_path, dpi=120)
    plt.close(fig)
    logger.info(f"Comparison figure written to {output_path}")
    return maps
