from .maps import AttributionMap, normalize_map
from .methods import (
    attribute,
    default_target,
    gradcam,
    gradcam_from_record,
    guided_backprop,
    guided_gradcam,
    saliency,
    smoothgrad,
)
from .localization import localization_energy, mask_area_fraction, permuted_mask, volume_localization_energy
from .render import compare_methods, overlay, save_png

__all__ = [
    "AttributionMap",
    "normalize_map",
    "attribute",
    "default_target",
    "gradcam",
    "gradcam_from_record",
    "guided_backprop",
    "guided_gradcam",
    "saliency",
    "smoothgrad",
    "localization_energy",
    "mask_area_fraction",
    "permuted_mask",
    "volume_localization_energy",
    "compare_methods",
    "overlay",
    "save_png",
]
