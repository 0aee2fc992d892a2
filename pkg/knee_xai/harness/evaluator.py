"""Validation metrics for classifiers, autoencoders and the hybrid."""
from __future__ import annotations
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import TargetMismatchError
from ..core.schemas import Architecture, MetricsReport
from ..data import PhantomDataset, Volume, load_volume, resize_volume
from ..data.dataset import load_dataset
from ..metrics import evaluate_scores, volume_psnr, volume_ssim
from ..models import VolumeModel, classify_batch, hybrid_forward, reconstruct
from .checkpoint import load_checkpoint, model_from_checkpoint

BATCH_SIZE = 8


def classification_report(scores: Sequence[float], labels: Sequence[Optional[int]],
                          logger: Optional[logging.Logger] = None) -> MetricsReport:
    """AUC and accuracy over the volumes that carry a label."""
    pairs = [(s, y) for s, y in zip(scores, labels) if y is not None]
    if not pairs:
        raise ValueError("No labelled volumes to score")
    return evaluate_scores([s for s, _ in pairs], [y for _, y in pairs], logger)


def reconstruction_report(pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> MetricsReport:
    """Mean PSNR and SSIM over every slice of every (original, reconstruction) pair."""
    psnrs: List[float] = []
    ssims: List[float] = []
    for original, recon in pairs:
        psnrs.extend(volume_psnr(original, recon))
        ssims.extend(volume_ssim(original, recon))
    if not psnrs:
        raise ValueError("No slices to score")
    psnr_db = math.inf if any(math.isinf(p) for p in psnrs) else float(np.mean(psnrs))
    return MetricsReport(psnr_db=psnr_db, ssim=float(np.mean(ssims)), n_samples=len(psnrs))


def merge_reports(classification: MetricsReport, reconstruction: MetricsReport) -> MetricsReport:
    """Hybrid row: all four metrics; n_samples counts volumes."""
    return MetricsReport(
        auc=classification.auc,
        accuracy=classification.accuracy,
        psnr_db=reconstruction.psnr_db,
        ssim=reconstruction.ssim,
        n_samples=classification.n_samples,
    )


class Evaluator:
    """Scores a model on a set of volumes; the metric family follows the architecture."""

    def __init__(self, logger: logging.Logger = None):
        self.logger = logger or logging.getLogger("KneeXAI.Evaluator")

    def probabilities(self, model: VolumeModel, volumes: Sequence[Volume]) -> List[float]:
        scores: List[float] = []
        for start in range(0, len(volumes), BATCH_SIZE):
            scores.extend(classify_batch(model, volumes[start:start + BATCH_SIZE]))
        return scores

    def reconstructions(self, model: VolumeModel, volumes: Sequence[Volume]) -> List[Tuple[np.ndarray, np.ndarray]]:
        pairs = []
        for volume in volumes:
            if model.spec.architecture == Architecture.UNET_MLP:
                recon = hybrid_forward(model, volume).reconstruction
            else:
                recon = reconstruct(model, volume.data).data
            pairs.append((volume.data, np.clip(recon, 0.0, 1.0)))
        return pairs

    def evaluate_model(self, model: VolumeModel, volumes: Sequence[Volume]) -> MetricsReport:
        volumes = list(volumes)
        if not volumes:
            raise ValueError("Cannot evaluate on an empty set")
        if model.is_classifier and model.reconstructs:
            report = merge_reports(
                classification_report(self.probabilities(model, volumes), [v.label for v in volumes], self.logger),
                reconstruction_report(self.reconstructions(model, volumes)),
            )
        elif model.is_classifier:
            report = classification_report(self.probabilities(model, volumes), [v.label for v in volumes],
                                           self.logger)
        elif model.reconstructs:
            report = reconstruction_report(self.reconstructions(model, volumes))
        else:
            raise TargetMismatchError(f"{model.spec.architecture.value} neither classifies nor reconstructs")
        self.logger.debug(f"Evaluated {len(volumes)} volume(s): {report.model_dump(mode='json', exclude_none=True)}")
        return report

    def load_volumes(self, data_path: str | Path, resize_edge: Optional[int] = None) -> List[Volume]:
        """A manifest CSV, a directory holding manifest.csv, or one container file."""
        data_path = Path(data_path)
        if data_path.is_dir():
            data_path = data_path / "manifest.csv"
        if data_path.suffix.lower() == ".csv":
            volumes = PhantomDataset.from_manifest(data_path).resized(resize_edge).volumes
        else:
            volume = load_volume(data_path)
            volumes = [resize_volume(volume, resize_edge) if resize_edge else volume]
        self.logger.info(f"Loaded {len(volumes)} volume(s) from {data_path}")
        return volumes

    def evaluate(self, checkpoint_path: str | Path, data_path: Optional[str | Path] = None) -> MetricsReport:
        """Score a checkpoint on ``data_path``, or on its own validation split when omitted."""
        checkpoint = load_checkpoint(checkpoint_path)
        model = model_from_checkpoint(checkpoint)
        config = checkpoint.config
        if data_path is None:
            _, volumes = load_dataset(config.data).split(config.data.train_fraction, config.seed)
            volumes = volumes.volumes
        else:
            volumes = self.load_volumes(data_path, config.data.resize_edge)
        report = self.evaluate_model(model, volumes)
        self.logger.info(f"Checkpoint {checkpoint_path} (epoch {checkpoint.epoch}) scored on {len(volumes)} volume(s)")
        return report
