"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations
import logging
from typing import Callable, Iterable, Optional

import numpy as np

from ..core.errors import NonFiniteError
from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)


def _scalar(value: Tensor) -> float:
    result = float(np.asarray(value.data, dtype=np.float64).reshape(-1)[0])
    if not np.isfinite(result):
        raise NonFiniteError(f"Function value is not finite: {result}")
    return result


def finite_diff_check(
    function: Callable[[Tensor], Tensor],
    point: Tensor,
    epsilon: float = 1e-3,
    coordinates: Optional[Iterable[int]] = None,
) -> float:
    """Max relative error between backward() and central differences.

    The point is promoted to 64-bit first. Per coordinate the error is
    |analytic - central| / max(|analytic|, |central|, 1e-8). ``coordinates``
    restricts the scan to flat indices of ``point``.
    """
    base = np.array(point.data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    value = function(leaf)
    _scalar(value)
    if value.requires_grad:
        backward(value)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)

    flat = base.reshape(-1)
    indices = range(flat.size) if coordinates is None else coordinates
    worst = 0.0
    with no_grad():
        for i in indices:
            shifted = flat.copy()
            shifted[i] = flat[i] + epsilon
            upper = _scalar(function(Tensor(shifted.reshape(base.shape))))
            shifted[i] = flat[i] - epsilon
            lower = _scalar(function(Tensor(shifted.reshape(base.shape))))
            central = (upper - lower) / (2.0 * epsilon)
            denom = max(abs(analytic[i]), abs(central), 1e-8)
            worst = max(worst, abs(analytic[i] - central) / denom)
    logger.debug(f"finite_diff_check: max relative error {worst:.3e}")
    return worst
