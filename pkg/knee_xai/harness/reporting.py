"""Results table, learning curves and cross-model figures from run records."""
from __future__ import annotations
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..attribution import gradcam, overlay  # noqa: E402
from ..core.schemas import Architecture, RunRecord  # noqa: E402
from ..core.utils import format_metric, load_json_file  # noqa: E402
from ..data import Volume, resize_volume  # noqa: E402
from ..models import hybrid_forward, reconstruct  # noqa: E402
from .checkpoint import load_checkpoint, model_from_checkpoint  # noqa: E402
from .trainer import RECORD_FILE  # noqa: E402

TABLE_COLUMNS = ("Model", "AUC", "Accuracy", "PSNR", "SSIM")
ARCHITECTURE_ORDER = {arch: i for i, arch in enumerate(Architecture)}
PNG_METADATA = {"Software": None}


def collect_records(runs_dir: str | Path) -> List[RunRecord]:
    """Every record.json below ``runs_dir``, in path order."""
    return [RunRecord.model_validate(load_json_file(p)) for p in sorted(Path(runs_dir).rglob(RECORD_FILE))]


def sort_records(records: Sequence[RunRecord]) -> List[RunRecord]:
    return sorted(records, key=lambda r: (ARCHITECTURE_ORDER[r.config.model.architecture], r.config.name,
                                          r.config_digest))


def render_table(records: Sequence[RunRecord]) -> str:
    """Markdown table, one row per run; '--' where a metric does not apply."""
    lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "|".join("---" for _ in TABLE_COLUMNS) + "|"]
    for record in sort_records(records):
        report = record.best_report
        cells = [record.config.name]
        if report is None:
            cells += ["--"] * 4
        else:
            cells += [format_metric(report.auc), format_metric(report.accuracy),
                      format_metric(report.psnr_db, 2), format_metric(report.ssim, 5)]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_curves(records: Sequence[RunRecord], path: str | Path) -> Path:
    """Training loss, train vs validation AUC, and validation PSNR per epoch."""
    fig, (ax_loss, ax_auc, ax_psnr) = plt.subplots(1, 3, figsize=(13, 3.8))
    for record in sort_records(records):
        name = record.config.name
        epochs = np.arange(1, len(record.train_loss) + 1)
        if len(epochs):
            ax_loss.plot(epochs, record.train_loss, label=name)
        train_auc = [(e, a) for e, a in zip(epochs, record.train_auc) if a is not None]
        if train_auc:
            ax_auc.plot(*zip(*train_auc), linestyle="--", label=f"{name} train")
        val_auc = [(e.epoch, e.report.auc) for e in record.evals if e.report.auc is not None]
        if val_auc:
            ax_auc.plot(*zip(*val_auc), marker="o", label=f"{name} validation")
        val_psnr = [(e.epoch, e.report.psnr_db) for e in record.evals
                    if e.report.psnr_db is not None and np.isfinite(e.report.psnr_db)]
        if val_psnr:
            ax_psnr.plot(*zip(*val_psnr), marker="o", label=name)
    for ax, title in ((ax_loss, "Training loss"), (ax_auc, "AUC"), (ax_psnr, "Validation PSNR (dB)")):
        ax.set_title(title)
        ax.set_xlabel("epoch")
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=7)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def _checkpointed(records: Sequence[RunRecord]) -> List[RunRecord]:
    return [r for r in sort_records(records)
            if r.status == "ok" and (r.best_checkpoint or r.final_checkpoint)
            and Path(r.best_checkpoint or r.final_checkpoint).exists()]


def _prepared(volume: Volume, record: RunRecord) -> Volume:
    edge = record.config.data.resize_edge
    return resize_volume(volume, edge) if edge else volume


def render_reconstructions(records: Sequence[RunRecord], volume: Volume, slice_index: int,
                           path: str | Path) -> Optional[Path]:
    """Original vs reconstruction of one slice, one row per reconstruction-capable run."""
    rows = [r for r in _checkpointed(records) if r.config.model.reconstructs]
    if not rows:
        return None
    fig, axes = plt.subplots(len(rows), 2, figsize=(5, 2.5 * len(rows)), squeeze=False)
    for row, record in enumerate(rows):
        model = model_from_checkpoint(load_checkpoint(record.best_checkpoint or record.final_checkpoint))
        data = _prepared(volume, record).data
        if record.config.model.architecture == Architecture.UNET_MLP:
            recon = hybrid_forward(model, data).reconstruction
        else:
            recon = reconstruct(model, data).data
        axes[row][0].imshow(data[slice_index], cmap="gray", vmin=0.0, vmax=1.0)
        axes[row][0].set_title(f"{record.config.name}: original", fontsize=8)
        axes[row][1].imshow(np.clip(recon[slice_index], 0.0, 1.0), cmap="gray", vmin=0.0, vmax=1.0)
        axes[row][1].set_title("reconstruction", fontsize=8)
    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def render_gradcam_grid(records: Sequence[RunRecord], volume: Volume, slice_index: int,
                        path: str | Path) -> Optional[Path]:
    """Side-by-side Grad-CAM overlays of the same slice across classifier runs."""
    columns = [r for r in _checkpointed(records) if r.config.model.is_classifier]
    if not columns:
        return None
    fig, axes = plt.subplots(1, len(columns), figsize=(2.6 * len(columns), 2.9), squeeze=False)
    for col, record in enumerate(columns):
        model = model_from_checkpoint(load_checkpoint(record.best_checkpoint or record.final_checkpoint))
        prepared = _prepared(volume, record)
        cam = gradcam(model, None, prepared)
        axes[0][col].imshow(overlay(cam.per_slice[slice_index], prepared.data[slice_index]))
        axes[0][col].set_title(record.config.name, fontsize=8)
        axes[0][col].set_xticks([])
        axes[0][col].set_yticks([])
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=PNG_METADATA)
    plt.close(fig)
    return path


class Reporter:
    """Writes table.md and curves.png for a set of records, plus figures for a chosen volume."""

    def __init__(self, logger: logging.Logger = None):
        self.logger = logger or logging.getLogger("KneeXAI.Reporter")

    def report(self, records: Sequence[RunRecord], out_dir: str | Path, volume: Optional[Volume] = None,
               slice_index: Optional[int] = None) -> Dict[str, str]:
        if not records:
            raise ValueError("report needs at least one run record")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        failed = [r.config.name for r in records if r.status != "ok"]
        if failed:
            self.logger.warning(f"{len(failed)} failed run(s) reported without metrics: {failed}")
        written: Dict[str, str] = {}
        table = out_dir / "table.md"
        table.write_text(render_table(records), encoding="utf-8")
        written["table"] = str(table)
        written["curves"] = str(render_curves(records, out_dir / "curves.png"))
        if volume is not None:
            index = volume.num_slices // 2 if slice_index is None else slice_index
            for key, renderer, name in (("reconstructions", render_reconstructions, "reconstructions.png"),
                                        ("gradcam_grid", render_gradcam_grid, "gradcam_grid.png")):
                figure = renderer(records, volume, index, out_dir / name)
                if figure is not None:
                    written[key] = str(figure)
        self.logger.info(f"Report for {len(records)} run(s) written to {out_dir}")
        return written
