"""Gradient attribution methods over a model, an optional tap and a volume."""
from __future__ import annotations
import logging
from contextlib import ExitStack, contextmanager
from functools import partial
from typing import Any, Iterator, Optional, Union

import numpy as np

from ..autograd import TapHandle, Tensor, backward, gradient_rules, no_grad, register_tap
from ..core.errors import TargetMismatchError
from ..core.schemas import AttributionMethod, AttributionTarget, SmoothGradParams
from ..nn import functional as F
from .maps import AttributionMap

logger = logging.getLogger("KneeXAI.Attribution")

# local derivative at zero input; a unit is active where its slope exceeds it
GUIDED_SLOPES = {"relu": 0.0, "leaky_relu": F.LEAKY_SLOPE, "gelu": 0.5}

TapLike = Union[TapHandle, str, None]


def guided_rule(local: np.ndarray, upstream: np.ndarray, active_above: float = 0.0) -> np.ndarray:
    """Pass only positive gradient, and only through units that are active."""
    return np.where(local > active_above, local, 0.0) * np.maximum(upstream, 0)


def _volume_data(volume: Any) -> np.ndarray:
    if isinstance(volume, Tensor):
        return volume.data
    if isinstance(volume, np.ndarray):
        return volume
    return np.asarray(volume.data)


def default_target(model: Any) -> AttributionTarget:
    if getattr(model, "is_classifier", False):
        return AttributionTarget.CLASS_LOGIT
    return AttributionTarget.LATENT_ENERGY


def _tap_layer(model: Any) -> str:
    layer = getattr(model, "tap_layer", None)
    if layer is None:
        raise TargetMismatchError(f"{type(model).__name__} declares no default tap layer")
    return layer


def _open_tap(model: Any, tap: TapLike, stack: ExitStack) -> TapHandle:
    """Use the given handle, or register a temporary one removed when ``stack`` closes."""
    if isinstance(tap, TapHandle):
        return tap
    return stack.enter_context(register_tap(model, tap or _tap_layer(model)))


def _target_scalar(model: Any, x: Tensor, target: AttributionTarget, tap: Optional[TapHandle]) -> Tensor:
    out = model(x)
    target = AttributionTarget(target)
    if target == AttributionTarget.CLASS_LOGIT:
        if not getattr(model, "is_classifier", False) or out.logit is None:
            raise TargetMismatchError("class_logit target requested on a model without a classification head")
        return out.logit.sum()
    if target == AttributionTarget.RECON_LOSS:
        if out.reconstruction is None:
            raise TargetMismatchError("recon_loss target requested on a model that does not reconstruct")
        diff = out.reconstruction - x.detach()
        return (diff * diff).mean()
    if tap is None or tap.record.activations is None:
        raise TargetMismatchError("latent_energy target needs a populated tap")
    return tap.record.activations.sum()


@contextmanager
def _evaluation_mode(model: Any) -> Iterator[None]:
    was_training = getattr(model, "training", False)
    model.eval()
    try:
        yield
    finally:
        model.train(was_training)


def _input_gradient(model: Any, data: np.ndarray, target: AttributionTarget, tap: TapLike) -> np.ndarray:
    """d target / d input for one forward+backward in evaluation mode."""
    with _evaluation_mode(model), ExitStack() as stack:
        handle = None
        if AttributionTarget(target) == AttributionTarget.LATENT_ENERGY:
            handle = _open_tap(model, tap, stack)
        x = Tensor(np.array(data, copy=True), requires_grad=True)
        backward(_target_scalar(model, x, target, handle))
        return np.zeros_like(data) if x.grad is None else x.grad


def saliency(model: Any, volume: Any, target: Optional[AttributionTarget] = None,
             tap: TapLike = None) -> AttributionMap:
    """|d target / d x| per pixel."""
    target = target or default_target(model)
    grad = _input_gradient(model, _volume_data(volume), target, tap)
    return AttributionMap.from_array(AttributionMethod.SALIENCY, np.abs(grad))


def smoothgrad(model: Any, volume: Any, params: Optional[SmoothGradParams] = None, seed: int = 0,
               target: Optional[AttributionTarget] = None, tap: TapLike = None) -> AttributionMap:
    """Mean saliency over ``params.n`` copies of x with Gaussian noise of std sigma * value range."""
    params = params or SmoothGradParams()
    target = target or default_target(model)
    data = _volume_data(volume)
    std = params.sigma * float(data.max() - data.min())
    rng = np.random.default_rng(seed)
    total = np.zeros(data.shape, dtype=np.float64)
    for _ in range(params.n):
        noisy = data
        if std > 0.0:
            noisy = (data + rng.normal(0.0, std, data.shape)).astype(data.dtype)
        total += np.abs(_input_gradient(model, noisy, target, tap))
    mean = (total / params.n).astype(data.dtype)
    logger.debug(f"smoothgrad: {params.n} sample(s), noise std {std:.4f}")
    return AttributionMap.from_array(AttributionMethod.SMOOTHGRAD, mean)


def guided_backprop(model: Any, volume: Any, target: Optional[AttributionTarget] = None,
                    tap: TapLike = None) -> AttributionMap:
    """Input gradient with negative gradients stopped at every rectifier, as magnitudes.

    The rule override lives only for this call; the model is never modified.
    """
    target = target or default_target(model)
    rules = {kind: partial(guided_rule, active_above=slope) for kind, slope in GUIDED_SLOPES.items()}
    with gradient_rules(**rules):
        grad = _input_gradient(model, _volume_data(volume), target, tap)
    return AttributionMap.from_array(AttributionMethod.GUIDED_BACKPROP, np.abs(grad))


def gradcam_from_record(activations: np.ndarray, upstream_grad: np.ndarray) -> np.ndarray:
    """rectify(sum_k alpha_k A_k) with alpha_k the spatial mean of dy/dA_k; (s, C, h, w) -> (s, h, w)."""
    alpha = upstream_grad.mean(axis=(2, 3), keepdims=True)
    return np.maximum((alpha * activations).sum(axis=1), 0)


def gradcam(model: Any, tap: TapLike, volume: Any, target: Optional[AttributionTarget] = None) -> AttributionMap:
    """Grad-CAM at the tapped layer, bilinearly upsampled to the slice extent.

    ``tap`` may be a registered handle, a layer name or None for the model's
    default layer.
    """
    target = target or default_target(model)
    data = _volume_data(volume)
    with _evaluation_mode(model), ExitStack() as stack:
        handle = _open_tap(model, tap, stack)
        x = Tensor(np.array(data, copy=True))
        backward(_target_scalar(model, x, target, handle))
        record = handle.record.require()
        activations = record.activations.data
        coarse = gradcam_from_record(activations, record.upstream_grad.data)
    with no_grad():
        fine = F.resize_bilinear(Tensor(coarse), data.shape[-2:]).data
    # interpolation weights are convex; clamp rounding below zero
    fine = np.maximum(fine, 0)
    return AttributionMap.from_array(AttributionMethod.GRADCAM, fine, coarse=coarse)


def guided_gradcam(model: Any, tap: TapLike, volume: Any,
                   target: Optional[AttributionTarget] = None) -> AttributionMap:
    cam = gradcam(model, tap, volume, target)
    guided = guided_backprop(model, volume, target, tap)
    return AttributionMap.from_array(AttributionMethod.GUIDED_GRADCAM, cam.per_slice * guided.per_slice)


def attribute(model: Any, volume: Any, method: AttributionMethod, target: Optional[AttributionTarget] = None,
              tap: TapLike = None, smoothgrad_params: Optional[SmoothGradParams] = None,
              seed: int = 0) -> AttributionMap:
    """Dispatch to one of the five methods by name."""
    method = AttributionMethod(method)
    if method == AttributionMethod.SALIENCY:
        return saliency(model, volume, target, tap)
    if method == AttributionMethod.SMOOTHGRAD:
        return smoothgrad(model, volume, smoothgrad_params, seed, target, tap)
    if method == AttributionMethod.GUIDED_BACKPROP:
        return guided_backprop(model, volume, target, tap)
    if method == AttributionMethod.GRADCAM:
        return gradcam(model, tap, volume, target)
    return guided_gradcam(model, tap, volume, target)
