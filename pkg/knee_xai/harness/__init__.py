from .attributor import Attributor
from .checkpoint import Checkpoint, load_checkpoint, model_from_checkpoint, save_checkpoint
from .evaluator import Evaluator, classification_report, reconstruction_report
from .grid import GridResult, GridSearch, expand_grid, leaderboard, load_space
from .reporting import Reporter, collect_records, render_table
from .trainer import Trainer, TrainResult, selection_score

__all__ = [
    "Attributor",
    "Checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
    "save_checkpoint",
    "Evaluator",
    "classification_report",
    "reconstruction_report",
    "GridResult",
    "GridSearch",
    "expand_grid",
    "leaderboard",
    "load_space",
    "Reporter",
    "collect_records",
    "render_table",
    "Trainer",
    "TrainResult",
    "selection_score",
]
