"""Per-slice attribution output for a checkpoint and a volume file."""
from __future__ import annotations
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..attribution import attribute, mask_area_fraction, overlay, save_png, volume_localization_energy
from ..attribution.methods import default_target
from ..core.errors import PartialOutputError
from ..core.schemas import AttributionMethod, AttributionTarget, SmoothGradParams
from ..core.utils import save_json_file
from ..data import Volume, load_volume, mask_path_for, resize_volume
from ..data.container import write_container
from .checkpoint import load_checkpoint, model_from_checkpoint

INDEX_FILE = "index.json"


class Attributor:
    """Writes one overlay PNG and one raw map container per slice, plus an index of slice order."""

    def __init__(self, logger: logging.Logger = None):
        self.logger = logger or logging.getLogger("KneeXAI.Attributor")

    def run(self, model: Any, volume: Volume, method: AttributionMethod, out_dir: str | Path,
            target: Optional[AttributionTarget] = None, seed: int = 0,
            smoothgrad_params: Optional[SmoothGradParams] = None) -> Dict[str, Any]:
        method = AttributionMethod(method)
        out_dir = Path(out_dir)
        result = attribute(model, volume, method, target=target, smoothgrad_params=smoothgrad_params, seed=seed)
        maps = result.per_slice
        if maps.dtype not in (np.float32, np.float64):
            maps = maps.astype(np.float64)
        slices = []
        try:
            for index in range(result.num_slices):
                overlay_name = f"overlay_{index:03d}.png"
                map_name = f"map_{index:03d}.npy"
                save_png(overlay(maps[index], volume.data[index]), out_dir / overlay_name)
                write_container(maps[index], out_dir / map_name)
                slices.append({"index": index, "overlay": overlay_name, "map": map_name})
            index_doc = {
                "patient_id": volume.patient_id,
                "method": method.value,
                "target": AttributionTarget(target or default_target(model)).value,
                "tap_layer": getattr(model, "tap_layer", None),
                "shape": list(maps.shape),
                "value_range": list(result.value_range),
                "slices": slices,
            }
            if volume.roi_mask is not None and volume.roi_mask.any():
                index_doc["localization_energy"] = volume_localization_energy(maps, volume.roi_mask)
                index_doc["mask_area_fraction"] = mask_area_fraction(volume.roi_mask)
            save_json_file(out_dir / INDEX_FILE, index_doc)
        except OSError as e:
            raise PartialOutputError(f"Attribution output incomplete after {len(slices)} slice(s): {e}",
                                     str(out_dir)) from e
        self.logger.info(f"{method.value}: wrote {len(slices)} overlay(s) and map(s) to {out_dir}")
        return index_doc

    def attribute_cmd(self, checkpoint_path: str | Path, volume_path: str | Path, method: AttributionMethod,
                      out_dir: str | Path, target: Optional[AttributionTarget] = None,
                      seed: int = 0) -> Dict[str, Any]:
        checkpoint = load_checkpoint(checkpoint_path)
        model = model_from_checkpoint(checkpoint)
        volume_path = Path(volume_path)
        volume = load_volume(volume_path, mask_path=mask_path_for(volume_path))
        edge = checkpoint.config.data.resize_edge
        if edge:
            volume = resize_volume(volume, edge)
        self.logger.info(f"Attributing {volume.patient_id} {volume.data.shape} with {AttributionMethod(method).value} "
                         f"on {checkpoint.config.model.architecture.value}")
        return self.run(model, volume, method, out_dir, target=target, seed=seed)
