"""Loading, resizing and materializing sets of volumes."""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..core.errors import ShapeError
from ..core.schemas import DataConfig, PhantomParams
from ..nn.functional import interpolation_matrix
from .container import read_container, write_container
from .manifest import ManifestRow, load_manifest, write_manifest
from .phantom import generate_phantom
from .splits import make_split
from .volume import Volume

logger = logging.getLogger("KneeXAI.Dataset")


def load_volume(path: str | Path, patient_id: Optional[str] = None, label: Optional[int] = None,
                mask_path: Optional[str | Path] = None) -> Volume:
    """Read a container; data outside [0, 1] is min-max normalized per volume, data inside is kept as is."""
    path = Path(path)
    raw = read_container(path).astype(np.float64)
    if raw.ndim == 2:
        raw = raw[None]
    if raw.ndim != 3:
        raise ShapeError(f"{path} holds shape {raw.shape}; expected (s, H, W)")
    low, high = (float(raw.min()), float(raw.max())) if raw.size else (0.0, 0.0)
    if 0.0 <= low and high <= 1.0:
        data = raw
    else:
        data = (raw - low) / (high - low) if high > low else np.zeros_like(raw)
    mask = None
    if mask_path is not None and Path(mask_path).exists():
        mask = read_container(mask_path).astype(bool)
    return Volume(patient_id=patient_id or path.stem, data=data.astype(np.float32), label=label, roi_mask=mask)


def resize_volume(volume: Volume, edge: int) -> Volume:
    """Bilinear (align-corners) resize of every slice to (edge, edge); masks threshold at 0.5."""
    if volume.data.shape[1:] == (edge, edge):
        return volume
    rows = interpolation_matrix(volume.data.shape[1], edge, np.float64)
    cols = interpolation_matrix(volume.data.shape[2], edge, np.float64).T
    data = np.clip(rows @ volume.data.astype(np.float64) @ cols, 0.0, 1.0).astype(volume.data.dtype)
    mask = None
    if volume.roi_mask is not None:
        weights = rows @ volume.roi_mask.astype(np.float64) @ cols
        mask = weights >= 0.5
        if volume.roi_mask.any() and not mask.any():
            # keep a lesion too small to survive thresholding
            mask.flat[int(np.argmax(weights))] = True
    return Volume(patient_id=volume.patient_id, data=data, label=volume.label, roi_mask=mask, plane=volume.plane)


def mask_path_for(volume_path: Path) -> Optional[Path]:
    """Phantom sets keep mask_XXXX.npy next to volume_XXXX.npy; None for other names."""
    if not volume_path.name.startswith("volume_"):
        return None
    return volume_path.with_name(volume_path.name.replace("volume_", "mask_", 1))



def write_phantom_set(params: PhantomParams, count: int, out_dir: str | Path) -> Path:
    """Write volume_XXXX.npy, mask_XXXX.npy and manifest.csv; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: List[ManifestRow] = []
    for index in range(count):
        volume = generate_phantom(params, index)
        name = f"volume_{index:04d}.npy"
        write_container(volume.data.astype("<f4"), out_dir / name)
        write_container(volume.roi_mask.astype("|u1"), out_dir / f"mask_{index:04d}.npy")
        rows.append(ManifestRow(patient_id=volume.patient_id, path=name, label=volume.label))
    manifest = write_manifest(out_dir / "manifest.csv", rows)
    logger.info(f"Wrote {count} phantoms ({sum(r.label for r in rows)} positive) to {out_dir}")
    return manifest


@dataclass
class PhantomDataset:
    """In-memory list of volumes with patient-level splitting."""

    volumes: List[Volume] = field(default_factory=list)

    @classmethod
    def from_phantoms(cls, params: PhantomParams, count: int) -> "PhantomDataset":
        return cls([generate_phantom(params, i) for i in range(count)])

    @classmethod
    def from_manifest(cls, path: str | Path) -> "PhantomDataset":
        volumes = []
        for row in load_manifest(path):
            volume_path = Path(row.path)
            volumes.append(load_volume(volume_path, row.patient_id, row.label, mask_path_for(volume_path)))
        return cls(volumes)

    def __len__(self) -> int:
        return len(self.volumes)

    def __getitem__(self, index: int) -> Volume:
        return self.volumes[index]

    @property
    def labels(self) -> List[Optional[int]]:
        return [v.label for v in self.volumes]

    @property
    def patient_ids(self) -> List[str]:
        return [v.patient_id for v in self.volumes]

    def resized(self, edge: Optional[int]) -> "PhantomDataset":
        if edge is None:
            return self
        return PhantomDataset([resize_volume(v, edge) for v in self.volumes])

    def split(self, train_fraction: float, seed: int) -> Tuple["PhantomDataset", "PhantomDataset"]:
        labels = self.labels
        known = None if any(label is None for label in labels) else labels
        train_idx, val_idx = make_split(len(self), train_fraction, seed, labels=known)
        return (PhantomDataset([self.volumes[i] for i in train_idx]),
                PhantomDataset([self.volumes[i] for i in val_idx]))


def load_dataset(config: DataConfig) -> PhantomDataset:
    if config.phantom is not None:
        dataset = PhantomDataset.from_phantoms(config.phantom, config.count)
    else:
        dataset = PhantomDataset.from_manifest(config.manifest)
    return dataset.resized(config.resize_edge)
