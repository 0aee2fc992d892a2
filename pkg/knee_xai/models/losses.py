"""Classification, reconstruction and combined hybrid losses."""
from __future__ import annotations
from typing import Optional

from ..autograd import Tensor, as_tensor
from ..core.errors import ShapeError
from ..core.schemas import LossConfig


def check_label(label: float) -> float:
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    return float(label)


def bce(probability: Tensor, label: float, clamp: float) -> Tensor:
    """-[y ln p + (1 - y) ln(1 - p)] with p clamped to [clamp, 1 - clamp]."""
    label = check_label(label)
    p = as_tensor(probability).clip(clamp, 1.0 - clamp).sum()
    if label == 1.0:
        return -(p.log())
    return -((1.0 - p).log())


def mse(reconstruction: Tensor, target: Tensor) -> Tensor:
    reconstruction, target = as_tensor(reconstruction), as_tensor(target)
    if reconstruction.shape != target.shape:
        raise ShapeError(f"Reconstruction {reconstruction.shape} and target {target.shape} differ in extent")
    diff = reconstruction - target
    return (diff * diff).mean()


def combined_loss(
    reconstruction: Optional[Tensor],
    target: Optional[Tensor],
    probability: Optional[Tensor],
    label: Optional[float],
    cfg: LossConfig,
) -> Tensor:
    """BCE(probability, label) + lambda_recon * MSE(reconstruction, target).

    Either term is dropped when its inputs are absent, so classifiers and the
    pure autoencoder train through the same call.
    """
    loss: Optional[Tensor] = None
    if probability is not None:
        if label is None:
            raise ValueError("A label is required for the classification term")
        loss = bce(probability, label, cfg.bce_clamp)
    if reconstruction is not None and target is not None:
        term = mse(reconstruction, target)
        term = term * cfg.lambda_recon if probability is not None else term
        loss = term if loss is None else loss + term
    if loss is None:
        raise ValueError("combined_loss needs a probability or a reconstruction")
    return loss
