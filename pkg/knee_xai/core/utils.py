from __future__ import annotations
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any


def load_json_file(path: str | Path) -> dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_json_file(path: str | Path, data: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def canonical_json(data: Any) -> str:
    """Compact, key-sorted JSON used for digests."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_digest(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def derive_seed(base_seed: int, index: int) -> int:
    """Private per-cell seed from (base seed, cell index), independent of scheduling."""
    digest = hashlib.sha256(f"{base_seed}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:4], "little")


def format_metric(value: float | str | None, digits: int = 4) -> str:
    """Render a results-table cell: '--' for inapplicable values, 'inf' for the PSNR marker."""
    if value is None:
        return "--"
    if isinstance(value, str):
        return value
    if math.isinf(value):
        return "inf"
    return f"{value:.{digits}f}"


def setup_logger(logfile: str | Path = "logs/run.log", level: int = logging.INFO) -> logging.Logger:
    Path(logfile).parent.mkdir(parents=True, exist_ok=True)
    logger = logging.getLogger("KneeXAI")
    logger.setLevel(level)
    logger.handlers.clear()
    fmt = logging.Formatter('[%(asctime)s] %(levelname)s: %(message)s', datefmt='%H:%M:%S')
    # Console handler
    ch = logging.StreamHandler()
    ch.setFormatter(fmt)
    logger.addHandler(ch)
    # File handler
    fh = logging.FileHandler(logfile, mode="a", encoding="utf-8")
    fh.setFormatter(fmt)
    logger.addHandler(fh)
    return logger
