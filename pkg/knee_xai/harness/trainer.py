"""Epoch loop: augmented single-volume Adam steps, periodic validation, best/final checkpoints."""
from __future__ import annotations
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..core.errors import NonFiniteLossError, PartialOutputError
from ..core.schemas import EvalEntry, ExperimentConfig, MetricsReport, RunRecord
from ..core.utils import derive_seed, save_json_file
from ..data import PhantomDataset, augment
from ..data.dataset import load_dataset
from ..metrics import roc_auc
from ..models import VolumeModel, build_model, make_optimizer, train_step
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluator import Evaluator

FINAL_CHECKPOINT = "final.ckpt"
BEST_CHECKPOINT = "best.ckpt"
RECORD_FILE = "record.json"


def selection_score(config: ExperimentConfig, report: Optional[MetricsReport]) -> float:
    """Model-selection value: validation AUC (accuracy when AUC is missing), or PSNR for pure reconstruction."""
    if report is None:
        return -math.inf
    if config.model.is_classifier:
        value = report.auc if report.auc is not None else report.accuracy
    else:
        value = report.psnr_db
    return -math.inf if value is None else float(value)


@dataclass
class TrainResult:
    record: RunRecord
    checkpoint: Checkpoint
    model: VolumeModel


class Trainer:
    """Runs one ExperimentConfig to completion (or resumes it from a checkpoint)."""

    def __init__(self, logger: logging.Logger = None, evaluator: Optional[Evaluator] = None):
        self.logger = logger or logging.getLogger("KneeXAI.Trainer")
        self.evaluator = evaluator or Evaluator(logger=self.logger)

    def _epoch_order(self, config: ExperimentConfig, epoch: int, n: int) -> np.ndarray:
        return np.random.default_rng([config.seed, epoch]).permutation(n)

    def _run_epoch(self, config: ExperimentConfig, epoch: int, model: VolumeModel, optimizer,
                   train_set: PhantomDataset) -> float:
        epoch_seed = derive_seed(config.seed, epoch)
        losses: List[float] = []
        for position, index in enumerate(self._epoch_order(config, epoch, len(train_set))):
            volume = train_set[int(index)]
            if config.augment is not None:
                volume = augment(volume, config.augment, derive_seed(epoch_seed, position))
            losses.append(train_step(model, volume, optimizer, config.loss))
        return float(np.mean(losses)) if losses else 0.0

    def _train_auc(self, model: VolumeModel, train_set: PhantomDataset) -> Optional[float]:
        labels = train_set.labels
        if not model.is_classifier or any(y is None for y in labels) or len(set(labels)) < 2:
            return None
        return roc_auc(self.evaluator.probabilities(model, train_set.volumes), labels)

    def _write_record(self, record: RunRecord, output_dir: Path) -> None:
        try:
            save_json_file(output_dir / RECORD_FILE, record.as_response())
        except OSError as e:
            raise PartialOutputError(f"Could not write run record: {e}", str(output_dir / RECORD_FILE)) from e

    def train(self, config: ExperimentConfig, dataset: Optional[PhantomDataset] = None) -> TrainResult:
        started = time.perf_counter()
        output_dir = Path(config.output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        dataset = dataset if dataset is not None else load_dataset(config.data)
        train_set, val_set = dataset.split(config.data.train_fraction, config.seed)
        self.logger.info(f"Training '{config.name}' ({config.model.architecture.value}) on {len(train_set)} volumes, "
                         f"validating on {len(val_set)}; {config.total_epochs} epoch(s)")

        model = build_model(config.model, config.seed)
        optimizer = make_optimizer(model)
        history: Dict[str, Any] = {"train_loss": [], "train_auc": [], "evals": [], "best_epoch": None,
                                   "best_score": None}
        start_epoch = 0
        if config.resume_from:
            resumed = load_checkpoint(config.resume_from, expected=config)
            resumed.restore(model, optimizer)
            history.update(resumed.history)
            start_epoch = resumed.epoch
            self.logger.info(f"Resumed from {config.resume_from} at epoch {start_epoch}")

        record = RunRecord(config=config, config_digest=config.digest())
        best_path: Optional[Path] = Path(history["best_path"]) if history.get("best_path") else None
        try:
            for epoch in range(start_epoch + 1, config.total_epochs + 1):
                loss = self._run_epoch(config, epoch, model, optimizer, train_set)
                history["train_loss"].append(loss)
                history["train_auc"].append(self._train_auc(model, train_set))
                message = f"Epoch {epoch}/{config.total_epochs}: loss {loss:.5f}"
                if epoch % config.eval_every == 0 or epoch == config.total_epochs:
                    report = self.evaluator.evaluate_model(model, val_set.volumes)
                    history["evals"].append(EvalEntry(epoch=epoch, report=report).model_dump(mode="json"))
                    score = selection_score(config, report)
                    if history["best_epoch"] is None or score > history["best_score"]:
                        history["best_epoch"], history["best_score"] = epoch, score
                        best_path = output_dir / BEST_CHECKPOINT
                        history["best_path"] = str(best_path)
                        save_checkpoint(Checkpoint.capture(config, epoch, model, optimizer, history), best_path)
                    message += f", validation {report.model_dump(mode='json', exclude_none=True)}"
                self.logger.info(message)
        except NonFiniteLossError as e:
            self.logger.error(f"Training '{config.name}' aborted: {e}")
            record = self._fill(record, history, None, best_path, started)
            record.status = "failed"
            record.errors.append(str(e))
            self._write_record(record, output_dir)
            raise

        checkpoint = Checkpoint.capture(config, max(start_epoch, config.total_epochs), model, optimizer, history)
        final_path = save_checkpoint(checkpoint, output_dir / FINAL_CHECKPOINT)
        record = self._fill(record, history, final_path, best_path, started)
        self._write_record(record, output_dir)
        self.logger.info(f"Finished '{config.name}' in {record.wall_time_s:.1f}s; best epoch {record.best_epoch}")
        return TrainResult(record=record, checkpoint=checkpoint, model=model)

    @staticmethod
    def _fill(record: RunRecord, history: Dict[str, Any], final_path: Optional[Path], best_path: Optional[Path],
              started: float) -> RunRecord:
        return record.model_copy(update={
            "train_loss": list(history["train_loss"]),
            "train_auc": list(history["train_auc"]),
            "evals": [EvalEntry.model_validate(e) for e in history["evals"]],
            "best_epoch": history["best_epoch"],
            "final_checkpoint": str(final_path) if final_path else None,
            "best_checkpoint": str(best_path) if best_path else None,
            "wall_time_s": time.perf_counter() - started,
        })
