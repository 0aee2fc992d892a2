"""Command-line driver: train, evaluate, gridsearch, attribute, report, phantoms.

Exit codes: 0 success, 1 usage error (bad arguments, invalid config, missing
file), 2 runtime failure.
"""
from __future__ import annotations
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .core.schemas import AttributionMethod, AttributionTarget, PhantomParams
from .core.settings import get_settings
from .core.utils import format_metric, load_json_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

console = Console()


class UsageError(Exception):
    """Bad command-line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    root = get_settings().output_root
    parser = _Parser(prog="knee_xai", description="Knee-MRI deep learning and attribution benchmark harness")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="Train one experiment config")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--epochs", type=int, help="Override the config's epoch count")
    p.add_argument("--resume", type=Path, help="Continue from a checkpoint")
    p.add_argument("--out", type=Path, help="Override the config's output directory")

    p = sub.add_parser("evaluate", help="Score a checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", type=Path, help="Manifest, phantom directory or volume file (default: validation split)")

    p = sub.add_parser("gridsearch", help="Train every cell of a search space")
    p.add_argument("--config", required=True, type=Path, help="Base experiment config")
    p.add_argument("--space", required=True, help="Space JSON file or bundled grid name (resnet, inception, vit, unet)")
    p.add_argument("--jobs", type=int, help="Parallel workers (default: CPU count)")
    p.add_argument("--budget", type=int, help="Run at most this many cells")

    p = sub.add_parser("attribute", help="Attribution maps and overlays for one volume")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--volume", required=True, type=Path)
    p.add_argument("--method", required=True, choices=[m.value for m in AttributionMethod])
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--target", choices=[t.value for t in AttributionTarget])
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="Results table and figures from run records")
    p.add_argument("--runs", type=Path, default=root)
    p.add_argument("--out", type=Path, default=root / "report")
    p.add_argument("--volume", type=Path, help="Volume for the cross-model figures")
    p.add_argument("--slice", type=int, dest="slice_index")

    p = sub.add_parser("phantoms", help="Write a phantom dataset with masks and manifest")
    p.add_argument("--params", required=True, type=Path)
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--out", type=Path, default=root / "phantoms")
    return parser


def _print_report(title: str, report: Dict[str, Any]) -> None:
    table = Table(title=title)
    for column in ("AUC", "Accuracy", "PSNR", "SSIM", "n"):
        table.add_column(column, justify="right")
    table.add_row(format_metric(report.get("auc")), format_metric(report.get("accuracy")),
                  format_metric(report.get("psnr_db"), 2), format_metric(report.get("ssim"), 5),
                  str(report.get("n_samples")))
    console.print(table)


def _print_leaderboard(rows: List[Dict[str, Any]]) -> None:
    table = Table(title="Leaderboard")
    for column in ("#", "Run", "Score", "Status", "Digest"):
        table.add_column(column)
    for row in rows:
        table.add_row(str(row["rank"]), row["name"], format_metric(row["score"]), row["status"],
                      row["config_digest"][:12])
    console.print(table)


def _load_config(path: Path, **overrides: Any):
    from .core.orchestrator import load_config

    config = load_config(path)
    update = {k: v for k, v in overrides.items() if v is not None}
    if update:
        config = config.model_validate({**config.model_dump(mode="json"), **update})
    return config


def run_command(args: argparse.Namespace) -> int:
    from .core.orchestrator import Orchestrator

    orch = Orchestrator()
    if args.verbose:
        orch.logger.setLevel(logging.DEBUG)

    if args.command == "train":
        config = _load_config(args.config, epochs=args.epochs,
                              resume_from=str(args.resume) if args.resume else None,
                              output_dir=str(args.out) if args.out else None)
        record = orch.train(config)
        if record["evals"]:
            _print_report(f"{config.name}: best epoch {record['best_epoch']}",
                          next(e["report"] for e in record["evals"] if e["epoch"] == record["best_epoch"]))
        console.print(f"Final checkpoint: {record['final_checkpoint']}")
    elif args.command == "evaluate":
        _print_report(str(args.checkpoint), orch.evaluate(args.checkpoint, args.data))
    elif args.command == "gridsearch":
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        result = orch.grid_search(_load_config(args.config), args.space, budget=args.budget, jobs=args.jobs)
        _print_leaderboard(result["leaderboard"])
        for error in result["errors"]:
            console.print(f"[yellow]{error}[/yellow]")
    elif args.command == "attribute":
        index = orch.attribute(args.checkpoint, args.volume, args.method, args.out, args.target, args.seed)
        console.print(f"{len(index['slices'])} slice(s) written to {args.out}")
    elif args.command == "report":
        result = orch.report(args.runs, args.out, args.volume, args.slice_index)
        console.print(result["table"])
        for name, path in result["files"].items():
            console.print(f"{name}: {path}")
    elif args.command == "phantoms":
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        params = PhantomParams.model_validate(load_json_file(args.params))
        result = orch.phantoms(params, args.count, args.out)
        console.print(f"Manifest: {result['manifest']}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        console.print(f"[red]{e}[/red]")
        return EXIT_USAGE
    try:
        return run_command(args)
    except (UsageError, ValidationError, FileNotFoundError) as e:
        console.print(f"[red]Usage error:[/red] {e}")
        return EXIT_USAGE
    except Exception as e:
        console.print(f"[red]Failed:[/red] {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
