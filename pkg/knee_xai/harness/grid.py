"""Cartesian grid search over config fields with a deterministic leaderboard."""
from __future__ import annotations
import copy
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from pydantic import ValidationError

from ..core.errors import ConfigError
from ..core.schemas import ExperimentConfig, RunRecord
from ..core.utils import derive_seed, load_json_file, save_json_file
from .trainer import Trainer, selection_score

GRIDS_PATH = Path(__file__).parents[2] / "data" / "grids.json"


def load_space(space: str | Path | Mapping[str, Any], grids_path: str | Path | None = None) -> Dict[str, list]:
    """A field -> values mapping given inline, as a JSON file, or as a row name of the bundled grids."""
    if isinstance(space, Mapping):
        loaded = dict(space)
    elif Path(space).exists():
        loaded = load_json_file(space)
    else:
        grids = load_json_file(grids_path or GRIDS_PATH)
        if str(space) not in grids:
            raise ConfigError(f"Unknown grid '{space}'. Available: {', '.join(sorted(grids))}")
        loaded = grids[str(space)]["space"]
    if not loaded:
        raise ConfigError("Search space is empty")
    for key, values in loaded.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"Search axis '{key}' must be a nonempty list")
    return loaded


def expand_grid(space: Mapping[str, list]) -> List[Dict[str, Any]]:
    """Every combination, last axis varying fastest, in the space's key order."""
    keys = list(space)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(space[k] for k in keys))]


def apply_overrides(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Set dotted config paths; bare names address model fields."""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        path = key.split(".") if "." in key else ["model", key]
        node = merged
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = value
    return merged


def cell_configs(base: ExperimentConfig, space: Mapping[str, list],
                 budget: Optional[int] = None) -> List[tuple[int, Dict[str, Any]]]:
    """(cell index, raw config dict) for the first ``budget`` cells."""
    if budget is not None and budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    cells = expand_grid(space)[:budget]
    dump = base.model_dump(mode="json", exclude={"resume_from"})
    out = []
    for index, overrides in enumerate(cells):
        raw = apply_overrides(dump, overrides)
        raw["seed"] = derive_seed(base.seed, index)
        raw["name"] = f"{base.name}-{index:03d}"
        raw["output_dir"] = str(Path(base.output_dir) / f"cell_{index:03d}")
        out.append((index, raw))
    return out


def _failed(base: ExperimentConfig, raw: Dict[str, Any], error: str) -> RunRecord:
    config = base.model_copy(update={"name": raw.get("name", base.name), "output_dir": raw.get("output_dir",
                                                                                          base.output_dir)})
    return RunRecord(config=config, config_digest=config.digest(), status="failed", errors=[error])


def run_cell(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Train one cell; worker entry point, so it takes and returns plain dicts."""
    config = ExperimentConfig.model_validate(raw)
    return Trainer(logger=logging.getLogger("KneeXAI.GridSearch")).train(config).record.as_response()


def leaderboard(records: List[RunRecord]) -> List[RunRecord]:
    """Completed runs by best validation score, descending; failures last; ties by lower config digest."""
    def key(record: RunRecord):
        score = selection_score(record.config, record.best_report) if record.status == "ok" else -math.inf
        return (record.status != "ok", -score, record.config_digest)
    return sorted(records, key=key)


@dataclass
class GridResult:
    leaderboard: List[RunRecord] = field(default_factory=list)
    failures: int = 0

    def as_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for rank, record in enumerate(self.leaderboard, start=1):
            rows.append({
                "rank": rank,
                "name": record.config.name,
                "architecture": record.config.model.architecture.value,
                "config_digest": record.config_digest,
                "score": selection_score(record.config, record.best_report) if record.status == "ok" else None,
                "status": record.status,
                "output_dir": record.config.output_dir,
                "errors": record.errors,
            })
        return rows


class GridSearch:
    """Runs each grid cell as an independent training job and ranks the outcomes."""

    def __init__(self, logger: logging.Logger = None):
        self.logger = logger or logging.getLogger("KneeXAI.GridSearch")

    def _collect(self, base: ExperimentConfig, raw: Dict[str, Any], outcome: Any) -> RunRecord:
        if isinstance(outcome, BaseException):
            self.logger.warning(f"Cell {raw.get('name')} failed: {outcome}")
            return _failed(base, raw, f"{type(outcome).__name__}: {outcome}")
        record = RunRecord.model_validate(outcome)
        if record.status != "ok":
            self.logger.warning(f"Cell {record.config.name} finished with errors: {record.errors}")
        return record

    def run(self, base: ExperimentConfig, space: Mapping[str, list], budget: Optional[int] = None,
            jobs: Optional[int] = None) -> GridResult:
        jobs = jobs or os.cpu_count() or 1
        cells = cell_configs(base, space, budget)
        self.logger.info(f"Grid search '{base.name}': {len(cells)} cell(s) over {list(space)}, {jobs} job(s)")

        valid, records = [], []
        for index, raw in cells:
            try:
                ExperimentConfig.model_validate(raw)
                valid.append(raw)
            except ValidationError as e:
                records.append(self._collect(base, raw, ConfigError(str(e))))

        if jobs == 1 or len(valid) <= 1:
            for raw in valid:
                try:
                    outcome: Any = run_cell(raw)
                except Exception as e:
                    outcome = e
                records.append(self._collect(base, raw, outcome))
        else:
            with ProcessPoolExecutor(max_workers=min(jobs, len(valid))) as pool:
                futures = [(raw, pool.submit(run_cell, raw)) for raw in valid]
                for raw, future in futures:
                    try:
                        outcome = future.result()
                    except Exception as e:
                        outcome = e
                    records.append(self._collect(base, raw, outcome))

        result = GridResult(leaderboard=leaderboard(records),
                            failures=sum(r.status != "ok" for r in records))
        save_json_file(Path(base.output_dir) / "leaderboard.json", result.as_rows())
        self.logger.info(f"Grid search done: {len(records) - result.failures} ok, {result.failures} failed")
        return result
