import numpy as np
import pytest

from knee_xai.attribution import (
    attribute,
    compare_methods,
    gradcam,
    gradcam_from_record,
    guided_backprop,
    guided_gradcam,
    localization_energy,
    normalize_map,
    overlay,
    permuted_mask,
    saliency,
    smoothgrad,
    volume_localization_energy,
)
from knee_xai.attribution.methods import guided_rule
from knee_xai.autograd import Tensor, backward, get_gradient_rule, no_grad, register_tap
from knee_xai.core.errors import ShapeError, TargetMismatchError, UnknownLayerError
from knee_xai.core.schemas import AttributionMethod, AttributionTarget, SmoothGradParams
from knee_xai.data import generate_phantom
from knee_xai.models import build_model
from knee_xai.models.base import ModelOutput
from knee_xai.nn import functional as F
from knee_xai.nn.modules import Module, Parameter


class _TwoLayer(Module):
    """x -> act(x W1) W2 on a flattened volume."""

    is_classifier = True

    def __init__(self, first, second, kind):
        super().__init__()
        self.first = Parameter(np.asarray(first, dtype=np.float64))
        self.second = Parameter(np.asarray(second, dtype=np.float64))
        self.kind = kind

    def forward(self, volume):
        hidden = F.activation(volume.reshape(1, -1) @ self.first, self.kind)
        return ModelOutput(logit=(hidden @ self.second).reshape(1))


@pytest.fixture
def classifier(make_spec):
    return build_model(make_spec("resnet_tiny"), seed=4)


@pytest.fixture
def positive_volume(tiny_params):
    params = tiny_params.model_copy(update={"lesion_probability": 1.0})
    return generate_phantom(params, 0)


def test_saliency_is_nonnegative_and_input_sized(classifier, positive_volume):
    result = saliency(classifier, positive_volume)
    assert result.method == AttributionMethod.SALIENCY
    assert result.per_slice.shape == positive_volume.data.shape
    assert (result.per_slice >= 0).all()
    assert result.value_range == (float(result.per_slice.min()), float(result.per_slice.max()))


def test_smoothgrad_without_noise_equals_saliency(classifier, positive_volume):
    plain = saliency(classifier, positive_volume)
    smooth = smoothgrad(classifier, positive_volume, SmoothGradParams(n=1, sigma=0.0))
    np.testing.assert_allclose(smooth.per_slice, plain.per_slice, rtol=1e-6)


def test_smoothgrad_is_reproducible_from_seed(classifier, positive_volume):
    params = SmoothGradParams(n=3, sigma=0.1)
    first = smoothgrad(classifier, positive_volume, params, seed=11)
    second = smoothgrad(classifier, positive_volume, params, seed=11)
    np.testing.assert_array_equal(first.per_slice, second.per_slice)


def test_guided_gradcam_is_product_of_its_parts(classifier, positive_volume):
    cam = gradcam(classifier, None, positive_volume)
    guided = guided_backprop(classifier, positive_volume)
    combined = guided_gradcam(classifier, None, positive_volume)
    np.testing.assert_allclose(combined.per_slice, cam.per_slice * guided.per_slice, rtol=1e-6)


def test_gradcam_is_rectified_and_upsampled(classifier, positive_volume):
    cam = gradcam(classifier, "layer4", positive_volume)
    assert cam.per_slice.shape == positive_volume.data.shape
    assert (cam.per_slice >= 0).all()
    s = positive_volume.num_slices
    assert cam.coarse.shape[0] == s and cam.coarse.ndim == 3


def test_gradcam_matches_hand_computation(classifier, positive_volume):
    classifier.eval()
    with register_tap(classifier, "layer4") as handle:
        backward(classifier(Tensor(positive_volume.data)).logit.sum())
        activations = handle.record.activations.data
        grads = handle.record.upstream_grad.data
    weights = grads.mean(axis=(2, 3))
    expected = np.maximum(np.einsum("sc,schw->shw", weights, activations), 0)
    cam = gradcam(classifier, None, positive_volume)
    np.testing.assert_allclose(cam.coarse, expected, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(gradcam_from_record(activations, grads), expected, rtol=1e-5, atol=1e-7)


def test_guided_rule_does_not_outlive_the_call(classifier, positive_volume):
    guided_backprop(classifier, positive_volume)
    assert get_gradient_rule("relu") is None
    np.testing.assert_allclose(saliency(classifier, positive_volume).per_slice,
                               saliency(classifier, positive_volume).per_slice)


def test_targets_follow_the_model_family(make_spec, positive_volume):
    unet = build_model(make_spec("unet"), seed=0)
    with pytest.raises(TargetMismatchError):
        saliency(unet, positive_volume, target=AttributionTarget.CLASS_LOGIT)
    latent = gradcam(unet, None, positive_volume)
    assert latent.per_slice.shape == positive_volume.data.shape
    recon = saliency(unet, positive_volume, target=AttributionTarget.RECON_LOSS)
    assert recon.per_slice.shape == positive_volume.data.shape
    with pytest.raises(UnknownLayerError):
        gradcam(unet, "layer99", positive_volume)


@pytest.mark.parametrize("method", list(AttributionMethod))
def test_dispatch_covers_every_method(classifier, positive_volume, method):
    result = attribute(classifier, positive_volume, method, smoothgrad_params=SmoothGradParams(n=2))
    assert result.method == method
    assert result.per_slice.shape == positive_volume.data.shape


def test_vit_gradcam_on_token_grid(make_spec, positive_volume):
    model = build_model(make_spec("vit_two_stage"), seed=0)
    cam = gradcam(model, None, positive_volume)
    assert cam.coarse.shape[1:] == (4, 4)
    assert cam.per_slice.shape == positive_volume.data.shape


def test_overlay_leaves_base_for_empty_map():
    image = np.linspace(0.0, 1.0, 64).reshape(8, 8)
    raster = overlay(np.zeros((8, 8)), image)
    assert raster.shape == (8, 8, 3) and raster.dtype == np.uint8
    expected = np.round(image * 255.0).astype(np.uint8)
    for channel in range(3):
        np.testing.assert_array_equal(raster[..., channel], expected)
    with pytest.raises(ShapeError):
        overlay(np.zeros((4, 4)), image)


def test_normalize_map():
    values = np.stack([np.full((2, 2), 3.0), np.array([[0.0, 1.0], [2.0, 4.0]])])
    out = normalize_map(values)
    np.testing.assert_array_equal(out[0], 0.0)
    np.testing.assert_allclose(out[1], [[0.0, 0.25], [0.5, 1.0]])


def test_localization_energy():
    mask = np.zeros((4, 4), dtype=bool)
    mask[:2, :2] = True
    heat = np.zeros((4, 4))
    heat[0, 0] = 3.0
    heat[3, 3] = 1.0
    assert localization_energy(heat, mask) == pytest.approx(0.75)
    assert localization_energy(np.ones((4, 4)), mask) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        localization_energy(heat, np.zeros((4, 4), dtype=bool))
    stack_mask = np.stack([np.zeros((4, 4), dtype=bool), mask])
    stack_heat = np.stack([np.full((4, 4), 9.0), heat])
    assert volume_localization_energy(stack_heat, stack_mask) == pytest.approx(0.75)


def test_permuted_mask_keeps_each_slice_area():
    mask = np.zeros((3, 6, 6), dtype=bool)
    mask[1, 1:4, 2:4] = True
    mask[2, 0, :] = True
    shuffled = permuted_mask(mask, seed=5)
    np.testing.assert_array_equal(shuffled.sum(axis=(1, 2)), mask.sum(axis=(1, 2)))
    assert not np.array_equal(shuffled, mask)
    np.testing.assert_array_equal(permuted_mask(mask, seed=5), shuffled)


def test_saliency_matches_central_differences(make_spec, rng):
    model = build_model(make_spec("resnet_tiny", input_edge=32, activation="gelu", slice_pool="mean"), seed=7)
    model = model.to_dtype(np.float64).eval()
    data = rng.random((2, 32, 32))
    result = saliency(model, data)

    def logit(x):
        with no_grad():
            return model(Tensor(x)).logit.sum().item()

    epsilon = 1e-4
    for flat in rng.choice(data.size, size=20, replace=False):
        index = np.unravel_index(flat, data.shape)
        up, down = data.copy(), data.copy()
        up[index] += epsilon
        down[index] -= epsilon
        central = (logit(up) - logit(down)) / (2 * epsilon)
        assert abs(result.per_slice[index] - abs(central)) < 5e-3


def test_comparison_figure_has_every_method(classifier, positive_volume, tmp_path):
    maps = compare_methods(classifier, [positive_volume], [0], tmp_path / "compare.png",
                           smoothgrad_params=SmoothGradParams(n=2))
    assert set(maps) == {m.value for m in AttributionMethod}
    assert all(len(results) == 1 for results in maps.values())
    assert (tmp_path / "compare.png").stat().st_size > 0


def test_guided_rule_gates_on_unit_activity():
    np.testing.assert_array_equal(guided_rule(np.array([0.0, 1.0]), np.array([1.0, -1.0])), [0.0, 0.0])
    np.testing.assert_array_equal(guided_rule(np.array([1.0, 1.0]), np.array([2.0, -1.0])), [2.0, 0.0])
    leaky = guided_rule(np.array([F.LEAKY_SLOPE, 1.0]), np.array([1.0, 3.0]), active_above=F.LEAKY_SLOPE)
    np.testing.assert_array_equal(leaky, [0.0, 3.0])


def test_guided_backprop_blocks_inactive_leaky_units():
    model = _TwoLayer([[1.0, -1.0], [1.0, -1.0]], [[1.0], [1.0]], "leaky_relu")
    volume = np.ones((1, 1, 2))
    np.testing.assert_allclose(saliency(model, volume).per_slice, np.full((1, 1, 2), 1.0 - F.LEAKY_SLOPE))
    np.testing.assert_allclose(guided_backprop(model, volume).per_slice, np.ones((1, 1, 2)))


def test_guided_backprop_equals_saliency_on_positive_network(rng):
    model = _TwoLayer(rng.uniform(0.1, 1.0, (6, 4)), rng.uniform(0.1, 1.0, (4, 1)), "relu")
    volume = rng.uniform(0.1, 1.0, (2, 1, 3))
    np.testing.assert_allclose(guided_backprop(model, volume).per_slice, saliency(model, volume).per_slice,
                               rtol=1e-12)


def test_smoothgrad_spread_shrinks_with_more_samples(classifier, positive_volume):
    def spread(n):
        maps = [smoothgrad(classifier, positive_volume, SmoothGradParams(n=n, sigma=0.2), seed=s).per_slice
                for s in range(6)]
        return float(np.var(np.stack(maps), axis=0).mean())

    assert spread(16) < spread(2)


def test_attribution_restores_the_training_mode(classifier, positive_volume):
    classifier.train()
    saliency(classifier, positive_volume)
    gradcam(classifier, None, positive_volume)
    assert classifier.training
    classifier.eval()
    guided_backprop(classifier, positive_volume)
    assert not classifier.training
