from .augment import apply_transform, augment
from .container import read_container, write_container
from .dataset import PhantomDataset, load_dataset, load_volume, mask_path_for, resize_volume, write_phantom_set
from .manifest import ManifestRow, load_manifest, write_manifest
from .phantom import generate_phantom
from .splits import make_split
from .volume import Volume

__all__ = [
    "apply_transform",
    "augment",
    "read_container",
    "write_container",
    "PhantomDataset",
    "load_dataset",
    "load_volume",
    "mask_path_for",
    "resize_volume",
    "write_phantom_set",
    "ManifestRow",
    "load_manifest",
    "write_manifest",
    "generate_phantom",
    "make_split",
    "Volume",
]
