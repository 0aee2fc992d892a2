from __future__ import annotations
from typing import Any, Dict, Mapping, Optional
import logging
from pathlib import Path

from ..data import load_volume, write_phantom_set
from ..harness import Attributor, Evaluator, GridSearch, Reporter, Trainer, collect_records, load_space
from .schemas import AttributionMethod, AttributionTarget, ExperimentConfig, PhantomParams
from .settings import get_settings
from .utils import load_json_file, setup_logger


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate an experiment config file; unknown keys are errors."""
    return ExperimentConfig.model_validate(load_json_file(path))


class Orchestrator:
    """Coordinates train -> evaluate -> report, grid search, attribution and phantom export.

    Shares one logger across the harness workers and places outputs under the
    configured output root when a config does not name its own directory.
    """
    def __init__(self, logger: logging.Logger = None, output_root: str | Path | None = None):
        settings = get_settings()
        self.output_root = Path(output_root) if output_root else settings.output_root
        self.logger = logger or setup_logger(self.output_root / "logs" / "run.log")
        self.evaluator = Evaluator(logger=self.logger)
        self.trainer = Trainer(logger=self.logger, evaluator=self.evaluator)
        self.attributor = Attributor(logger=self.logger)
        self.grid = GridSearch(logger=self.logger)
        self.reporter = Reporter(logger=self.logger)

    def _placed(self, config: ExperimentConfig) -> ExperimentConfig:
        if "output_dir" in config.model_fields_set:
            return config
        return config.model_copy(update={"output_dir": str(self.output_root / config.name)})

    def train(self, config: ExperimentConfig) -> Dict[str, Any]:
        config = self._placed(config)
        self.logger.info(f"Training run '{config.name}' -> {config.output_dir}")
        try:
            result = self.trainer.train(config)
        except Exception as e:
            self.logger.error(f"Training failed: {str(e)}", exc_info=True)
            raise
        return result.record.as_response()

    def run(self, config: ExperimentConfig) -> Dict[str, Any]:
        """Complete experiment workflow: train, re-score the best checkpoint, write the report."""
        config = self._placed(config)
        self.logger.info(f"Starting experiment workflow for '{config.name}' ({config.model.architecture.value})")

        # Step 1: Training
        try:
            self.logger.info("Step 1/3: Training...")
            record = self.trainer.train(config).record
        except Exception as e:
            self.logger.error(f"Training failed: {str(e)}", exc_info=True)
            return {"record": None, "report": None, "files": {}, "errors": [f"Training error: {str(e)}"]}

        # Step 2: Evaluation of the selected checkpoint
        checkpoint = record.best_checkpoint or record.final_checkpoint
        try:
            self.logger.info(f"Step 2/3: Evaluating {checkpoint}...")
            report = self.evaluator.evaluate(checkpoint)
        except Exception as e:
            self.logger.error(f"Evaluation failed: {str(e)}", exc_info=True)
            return {"record": record.as_response(), "report": None, "files": {},
                    "errors": [f"Evaluation error: {str(e)}"]}

        # Step 3: Report
        try:
            self.logger.info("Step 3/3: Writing report...")
            files = self.reporter.report([record], Path(config.output_dir) / "report")
        except Exception as e:
            self.logger.error(f"Report failed: {str(e)}", exc_info=True)
            return {"record": record.as_response(), "report": report.model_dump(mode="json"), "files": {},
                    "errors": [f"Report error: {str(e)}"]}

        self.logger.info("Experiment workflow completed successfully.")
        return {
            "record": record.as_response(),
            "report": report.model_dump(mode="json"),
            "files": files,
            "errors": [],
        }

    def evaluate(self, checkpoint: str | Path, data: Optional[str | Path] = None) -> Dict[str, Any]:
        report = self.evaluator.evaluate(checkpoint, data)
        return report.model_dump(mode="json")

    def grid_search(self, config: ExperimentConfig, space: str | Path | Mapping[str, Any],
                    budget: Optional[int] = None, jobs: Optional[int] = None) -> Dict[str, Any]:
        """Failed cells are recorded in the leaderboard and do not stop the search."""
        config = self._placed(config)
        result = self.grid.run(config, load_space(space), budget=budget, jobs=jobs)
        errors = [f"{r.config.name}: {e}" for r in result.leaderboard for e in r.errors]
        return {"leaderboard": result.as_rows(), "errors": errors}

    def attribute(self, checkpoint: str | Path, volume: str | Path, method: AttributionMethod | str,
                  out_dir: str | Path, target: AttributionTarget | str | None = None,
                  seed: int = 0) -> Dict[str, Any]:
        return self.attributor.attribute_cmd(
            checkpoint, volume, AttributionMethod(method), out_dir,
            target=AttributionTarget(target) if target else None, seed=seed,
        )

    def report(self, runs_dir: str | Path, out_dir: str | Path, volume: str | Path | None = None,
               slice_index: Optional[int] = None) -> Dict[str, Any]:
        records = collect_records(runs_dir)
        if not records:
            raise FileNotFoundError(f"No run records found under {runs_dir}")
        files = self.reporter.report(records, out_dir, load_volume(volume) if volume else None, slice_index)
        return {"runs": len(records), "files": files, "table": Path(files["table"]).read_text(encoding="utf-8")}

    def phantoms(self, params: PhantomParams, count: int, out_dir: str | Path) -> Dict[str, Any]:
        manifest = write_phantom_set(params, count, out_dir)
        return {"manifest": str(manifest), "count": count}
