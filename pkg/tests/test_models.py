import numpy as np
import pytest

from knee_xai.autograd import Tensor, backward, finite_diff_check
from knee_xai.core.errors import ConfigError, ShapeError, TargetMismatchError
from knee_xai.core.schemas import Architecture, LossConfig, ModelSpec, PhantomParams
from knee_xai.data import generate_phantom
from knee_xai.models import (
    Adam,
    bce,
    build_model,
    classify_batch,
    classify_volume,
    combined_loss,
    default_tap_layer,
    hybrid_forward,
    make_optimizer,
    reconstruct,
    registered_architectures,
    train_step,
    volume_loss,
)
from knee_xai.metrics import psnr
from knee_xai.models.resnet import block_plan


def test_all_families_are_registered():
    assert registered_architectures() == sorted(a.value for a in Architecture)


@pytest.mark.parametrize("architecture", ["resnet_tiny", "inception_tiny", "vit_two_stage", "unet_mlp"])
def test_classifiers_emit_one_probability(make_spec, tiny_params, architecture):
    model = build_model(make_spec(architecture), seed=0)
    p = classify_volume(model, generate_phantom(tiny_params, 0))
    assert 0.0 < p < 1.0


def test_build_is_deterministic_in_seed(make_spec):
    first = build_model(make_spec("resnet_tiny"), seed=5).state_dict()
    second = build_model(make_spec("resnet_tiny"), seed=5).state_dict()
    other = build_model(make_spec("resnet_tiny"), seed=6).state_dict()
    assert list(first) == list(second)
    assert all(np.array_equal(first[k], second[k]) for k in first)
    assert not all(np.array_equal(first[k], other[k]) for k in first)


def test_resnet_block_plan_halves_when_widening():
    assert block_plan([8, 16, 32]) == [(8, 1), (16, 2), (32, 2), (32, 1)]


def test_default_tap_layers(make_spec):
    expected = {
        "resnet_tiny": "layer4",
        "inception_tiny": "block3",
        "vit_two_stage": "image_encoder.token_grid",
        "unet": "bottleneck",
        "unet_mlp": "bottleneck",
    }
    for architecture, layer in expected.items():
        spec = make_spec(architecture)
        assert default_tap_layer(spec) == layer
        assert layer in dict(build_model(spec).named_modules())


def test_vit_rejects_inconsistent_shapes(make_spec):
    with pytest.raises(ConfigError):
        build_model(make_spec("vit_two_stage", transformer_heads=3))
    with pytest.raises(ConfigError):
        build_model(make_spec("vit_two_stage", patch_size=5))
    model = build_model(make_spec("vit_two_stage"))
    with pytest.raises(ShapeError):
        classify_volume(model, np.zeros((2, 12, 12), dtype=np.float32))


def test_vit_batch_matches_single_volumes(make_spec, tiny_params):
    model = build_model(make_spec("vit_two_stage"), seed=1)
    volumes = [generate_phantom(tiny_params, i) for i in range(4)]
    batched = classify_batch(model, volumes)
    single = [classify_volume(model, v) for v in volumes]
    np.testing.assert_allclose(batched, single, rtol=1e-4, atol=1e-6)


def test_unet_reconstructs_every_input_layout(make_spec, rng):
    model = build_model(make_spec("unet"), seed=0)
    for shape in [(16, 16), (3, 16, 16), (2, 1, 16, 16)]:
        assert reconstruct(model, rng.random(shape).astype(np.float32)).shape == shape
    with pytest.raises(ShapeError):
        reconstruct(model, rng.random((1, 17, 17)).astype(np.float32))
    with pytest.raises(ConfigError):
        build_model(make_spec("unet", base_channels=[4, 8, 16], input_edge=18))


def test_heads_are_checked_against_the_family(make_spec, tiny_params):
    volume = generate_phantom(tiny_params, 0)
    with pytest.raises(TargetMismatchError):
        classify_volume(build_model(make_spec("unet")), volume)
    with pytest.raises(TargetMismatchError):
        reconstruct(build_model(make_spec("resnet_tiny")), volume.data)
    with pytest.raises(TargetMismatchError):
        hybrid_forward(build_model(make_spec("unet")), volume)


def test_hybrid_forward_gives_both_outputs(make_spec, tiny_params):
    volume = generate_phantom(tiny_params, 1)
    out = hybrid_forward(build_model(make_spec("unet_mlp", mlp_head="residual")), volume)
    assert out.reconstruction.shape == volume.data.shape
    assert 0.0 < out.probability < 1.0


def test_bce_and_combined_loss():
    p = Tensor(np.array([0.8]))
    assert bce(p, 1, 1e-6).item() == pytest.approx(-np.log(0.8))
    assert bce(Tensor(np.array([1.0])), 0, 1e-6).item() == pytest.approx(-np.log(1e-6))
    with pytest.raises(ValueError):
        bce(p, 2, 1e-6)
    recon = Tensor(np.full((2, 2), 0.5))
    target = Tensor(np.zeros((2, 2)))
    cfg = LossConfig(lambda_recon=2.0)
    assert combined_loss(recon, target, p, 1, cfg).item() == pytest.approx(-np.log(0.8) + 2.0 * 0.25)
    assert combined_loss(recon, target, None, None, cfg).item() == pytest.approx(0.25)
    with pytest.raises(ShapeError):
        combined_loss(recon, Tensor(np.zeros((3, 2))), None, None, cfg)


def test_classifier_weight_gradient_matches_finite_differences(make_spec, tiny_params):
    spec = make_spec("resnet_tiny", activation="gelu", slice_pool="mean")
    model = build_model(spec, seed=2).to_dtype(np.float64)
    model.eval()
    volume = generate_phantom(tiny_params, 0).data.astype(np.float64)
    name = "layer4.conv2.weight"

    def logit(weight):
        with model.substitute(name, weight):
            return model(Tensor(volume)).logit.sum()

    weight = dict(model.named_parameters())[name]
    assert finite_diff_check(logit, Tensor(weight.data.copy()), epsilon=1e-5,
                             coordinates=range(0, weight.size, 37)) < 1e-4


def test_adam_step_and_state_round_trip(make_spec, tiny_params):
    model = build_model(make_spec("resnet_tiny"), seed=0)
    optimizer = make_optimizer(model)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    loss = train_step(model, generate_phantom(tiny_params, 0), optimizer, LossConfig())
    assert np.isfinite(loss)
    assert optimizer.t == 1
    assert not np.array_equal(before["head.weight"], model.state_dict()["head.weight"])

    fresh = Adam(model.named_trainable_parameters(), lr=optimizer.lr)
    fresh.load_state_arrays(optimizer.state_arrays(), optimizer.t)
    assert fresh.t == 1
    np.testing.assert_array_equal(fresh.m["head.weight"], optimizer.m["head.weight"])
    with pytest.raises(ConfigError):
        fresh.load_state_arrays({}, 1)


def test_weight_decay_only_for_inception(make_spec):
    assert make_optimizer(build_model(make_spec("inception_tiny", reg_coeff=0.1))).weight_decay == 0.1
    assert make_optimizer(build_model(make_spec("resnet_tiny", reg_coeff=0.1))).weight_decay == 0.0


def test_frozen_hybrid_encoder_is_left_out(make_spec):
    model = build_model(make_spec("unet_mlp", freeze_encoder=True))
    names = {n for n, _ in model.named_trainable_parameters()}
    assert not any(n.startswith(("encoder1", "bottleneck")) for n in names)
    assert any(n.startswith("mlp") for n in names)
    assert any(n.startswith("decoder1") for n in names)


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(architecture="unet", base_channels=[16, 8])
    with pytest.raises(ValueError):
        ModelSpec(architecture="capsnet")


def _zero_head(model):
    for name, parameter in model.named_parameters():
        if name.startswith(("head.", "mlp.")):
            parameter.data[...] = 0.0
    return model


@pytest.mark.parametrize("architecture", ["resnet_tiny", "inception_tiny", "vit_two_stage", "unet_mlp"])
def test_zeroed_head_gives_even_odds(make_spec, tiny_params, architecture):
    model = _zero_head(build_model(make_spec(architecture), seed=0))
    assert classify_volume(model, generate_phantom(tiny_params, 0)) == pytest.approx(0.5)


@pytest.mark.parametrize("architecture", ["resnet_tiny", "inception_tiny"])
@pytest.mark.parametrize("slice_pool", ["max", "mean"])
def test_slice_order_does_not_change_the_probability(make_spec, architecture, slice_pool):
    params = PhantomParams(edge=16, s_range=(5, 5), lesion_probability=1.0, lesion_size=(2, 2), seed=4)
    volume = generate_phantom(params, 0)
    model = build_model(make_spec(architecture, slice_pool=slice_pool), seed=3)
    order = np.random.default_rng(0).permutation(volume.num_slices)
    shuffled = volume.data[order]
    assert classify_volume(model, shuffled) == pytest.approx(classify_volume(model, volume), rel=1e-5)


def test_loss_decreases_over_fifty_steps(make_spec, tiny_params):
    model = build_model(make_spec("resnet_tiny", learning_rate=1e-3), seed=0)
    optimizer = make_optimizer(model)
    volume = generate_phantom(tiny_params.model_copy(update={"lesion_probability": 1.0}), 0)
    losses = [train_step(model, volume, optimizer, LossConfig()) for _ in range(50)]
    assert np.mean(losses[-5:]) < losses[0]


def test_zero_learning_rate_leaves_parameters_unchanged(make_spec, tiny_params):
    model = build_model(make_spec("unet_mlp"), seed=0)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    optimizer = Adam(model.named_trainable_parameters(), lr=0.0)
    for index in range(3):
        train_step(model, generate_phantom(tiny_params, index), optimizer, LossConfig())
    assert optimizer.t == 3
    assert all(np.array_equal(before[n], p.data) for n, p in model.named_parameters())


def test_hybrid_loss_reaches_both_heads(make_spec, tiny_params):
    model = build_model(make_spec("unet_mlp"), seed=0)
    volume = generate_phantom(tiny_params.model_copy(update={"lesion_probability": 1.0}), 0)
    model.train()
    backward(volume_loss(model, volume, LossConfig(lambda_recon=1.0)))
    grads = {n: p.grad for n, p in model.named_parameters()}
    assert any(g is not None and np.abs(g).sum() > 0 for n, g in grads.items() if n.startswith("mlp."))
    assert any(g is not None and np.abs(g).sum() > 0 for n, g in grads.items() if n.startswith("decoder1"))
    assert any(g is not None and np.abs(g).sum() > 0 for n, g in grads.items() if n.startswith("encoder1"))


def test_bias_free_unet_maps_zero_to_zero(make_spec):
    model = build_model(make_spec("unet", norm="none", conv_bias=False), seed=0)
    assert not any(name.endswith("bias") for name, _ in model.named_parameters())
    np.testing.assert_array_equal(reconstruct(model, np.zeros((2, 16, 16), dtype=np.float32)).data, 0.0)
    assert any(name.endswith("bias") for name, _ in build_model(make_spec("unet", norm="none")).named_parameters())


@pytest.mark.slow
def test_unet_overfits_one_slice(make_spec, tiny_params):
    model = build_model(make_spec("unet", norm="none", base_channels=[8, 16], learning_rate=1e-3), seed=0)
    optimizer = make_optimizer(model)
    target = generate_phantom(tiny_params, 0).data[:1]
    for _ in range(2000):
        train_step(model, target, optimizer, LossConfig())
    assert psnr(target, reconstruct(model, target).data) >= 40.0


def _output_scalar(model, rng):
    projection = None

    def f(t):
        nonlocal projection
        out = model(t)
        value = out.logit.sum() if out.logit is not None else None
        if out.reconstruction is not None:
            if projection is None:
                projection = Tensor(rng.normal(size=out.reconstruction.shape))
            recon = (out.reconstruction * projection).sum()
            value = recon if value is None else value + recon
        return value

    return f


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("architecture", sorted(a.value for a in Architecture))
def test_model_input_gradients_match_central_differences(make_spec, tiny_params, architecture, seed):
    overrides = {"activation": "gelu"}
    if architecture in ("resnet_tiny", "inception_tiny"):
        overrides["slice_pool"] = "mean"
    model = build_model(make_spec(architecture, **overrides), seed=seed).to_dtype(np.float64)
    model.eval()
    rng = np.random.default_rng(seed)
    volume = rng.random((2, 16, 16))
    assert finite_diff_check(_output_scalar(model, rng), Tensor(volume), epsilon=1e-5,
                             coordinates=range(seed, volume.size, 29)) < 1e-3
