"""Single-file checkpoints: magic, header length, JSON header, raw little-endian blobs in header order."""
from __future__ import annotations
import json
import logging
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..core.errors import ConfigError, ContainerError, PartialOutputError, TruncatedPayloadError
from ..core.schemas import ExperimentConfig
from ..core.utils import canonical_json
from ..models import Adam, VolumeModel, build_model

logger = logging.getLogger("KneeXAI.Checkpoint")

MAGIC = b"KXAICKPT"
CHECKPOINT_VERSION = 1
BLOB_DTYPES = ("<f4", "<f8", "<i8")


@dataclass
class Checkpoint:
    """Everything needed to continue training bit-for-bit.

    ``history`` carries the run record's curves up to ``epoch`` so a resumed
    run reports the full trajectory.
    """

    config: ExperimentConfig
    epoch: int
    model_state: "OrderedDict[str, np.ndarray]"
    optimizer_state: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    optimizer_t: int = 0
    rng_state: Dict[str, Any] = field(default_factory=dict)
    history: Dict[str, Any] = field(default_factory=dict)

    @property
    def config_digest(self) -> str:
        return self.config.digest()

    @classmethod
    def capture(cls, config: ExperimentConfig, epoch: int, model: VolumeModel, optimizer: Adam,
                history: Optional[Dict[str, Any]] = None) -> "Checkpoint":
        return cls(
            config=config,
            epoch=epoch,
            model_state=model.state_dict(),
            optimizer_state=OrderedDict((k, v.copy()) for k, v in optimizer.state_arrays().items()),
            optimizer_t=optimizer.t,
            rng_state=model.generator.bit_generator.state,
            history=dict(history or {}),
        )

    def restore(self, model: VolumeModel, optimizer: Optional[Adam] = None) -> None:
        model.load_state_dict(self.model_state)
        if self.rng_state:
            model.generator.bit_generator.state = self.rng_state
        if optimizer is not None:
            optimizer.load_state_arrays(self.optimizer_state, self.optimizer_t)


def _blob_dtype(array: np.ndarray, name: str) -> str:
    descr = array.dtype.newbyteorder("<").str
    if descr not in BLOB_DTYPES:
        raise ConfigError(f"Cannot checkpoint '{name}' with dtype {array.dtype}")
    return descr


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    tensors, blobs, offset = [], [], 0
    for group, state in (("model", checkpoint.model_state), ("optimizer", checkpoint.optimizer_state)):
        for name, value in state.items():
            array = np.asarray(value)
            descr = _blob_dtype(array, name)
            blob = np.ascontiguousarray(array, dtype=np.dtype(descr)).tobytes(order="C")
            tensors.append({"name": name, "group": group, "dtype": descr, "shape": list(array.shape),
                            "offset": offset, "nbytes": len(blob)})
            blobs.append(blob)
            offset += len(blob)
    header = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": checkpoint.config.model_dump(mode="json"),
        "config_digest": checkpoint.config.digest(),
        "recipe_digest": checkpoint.config.recipe_digest(),
        "epoch": checkpoint.epoch,
        "optimizer_t": checkpoint.optimizer_t,
        "rng_state": checkpoint.rng_state,
        "history": checkpoint.history,
        "tensors": tensors,
    }
    encoded = canonical_json(header).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(encoded)) + encoded + b"".join(blobs)


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    """Write atomically through a temporary sibling file."""
    path = Path(path)
    payload = encode_checkpoint(checkpoint)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise PartialOutputError(f"Could not write checkpoint: {e}", str(path)) from e
    logger.debug(f"Saved epoch-{checkpoint.epoch} checkpoint to {path} ({len(payload)} bytes)")
    return path


def read_header(raw: bytes, path: str) -> tuple[Dict[str, Any], int]:
    if raw[:len(MAGIC)] != MAGIC:
        raise ContainerError("Not a knee_xai checkpoint", path)
    start = len(MAGIC) + 8
    if len(raw) < start:
        raise TruncatedPayloadError("Checkpoint ends inside the header length", path)
    (length,) = struct.unpack("<Q", raw[len(MAGIC):start])
    if len(raw) < start + length:
        raise TruncatedPayloadError("Checkpoint ends inside the header", path)
    return json.loads(raw[start:start + length].decode("utf-8")), start + length


def load_checkpoint(path: str | Path, expected: Optional[ExperimentConfig] = None) -> Checkpoint:
    """Read a checkpoint; with ``expected``, its training recipe must match the stored one."""
    path = Path(path)
    raw = path.read_bytes()
    header, body = read_header(raw, str(path))
    if header.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"Unsupported checkpoint version {header.get('checkpoint_version')}")
    config = ExperimentConfig.model_validate(header["config"])
    if config.digest() != header["config_digest"]:
        raise ConfigError(f"Checkpoint {path} is corrupt: stored digest does not match its config")
    if expected is not None and expected.recipe_digest() != header["recipe_digest"]:
        raise ConfigError(f"Checkpoint {path} was written under a different config "
                          f"({header['recipe_digest'][:12]} vs {expected.recipe_digest()[:12]})")

    groups: Dict[str, "OrderedDict[str, np.ndarray]"] = {"model": OrderedDict(), "optimizer": OrderedDict()}
    for entry in header["tensors"]:
        start = body + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(raw):
            raise TruncatedPayloadError(f"Blob '{entry['name']}' runs past the end of the file", str(path))
        array = np.frombuffer(raw[start:stop], dtype=np.dtype(entry["dtype"]))
        groups[entry["group"]][entry["name"]] = array.reshape(entry["shape"]).copy()
    return Checkpoint(
        config=config,
        epoch=int(header["epoch"]),
        model_state=groups["model"],
        optimizer_state=groups["optimizer"],
        optimizer_t=int(header["optimizer_t"]),
        rng_state=header["rng_state"],
        history=header.get("history", {}),
    )


def model_from_checkpoint(checkpoint: Checkpoint) -> VolumeModel:
    """Rebuild the model of a checkpoint, weights loaded, in evaluation mode."""
    model = build_model(checkpoint.config.model, checkpoint.config.seed)
    checkpoint.restore(model)
    return model.eval()
