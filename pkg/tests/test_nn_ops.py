import numpy as np
import pytest

from knee_xai.autograd import Tensor, backward, finite_diff_check
from knee_xai.core.errors import ShapeError
from knee_xai.core.schemas import LayerKind, LayerSpec
from knee_xai.nn import functional as F
from knee_xai.nn.modules import BatchNorm, Dropout, MultiHeadAttention, build_layer


def test_conv_transpose_is_adjoint_of_conv(rng):
    x = rng.normal(size=(2, 3, 7, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    y = F.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    assert y.shape == (2, 4, 4, 4)
    cotangent = rng.normal(size=y.shape)
    back = F.conv_transpose2d(Tensor(cotangent), Tensor(w), stride=2, padding=1).data
    assert back.shape == x.shape
    assert np.sum(y * cotangent) == pytest.approx(np.sum(x * back), rel=1e-10)


def test_conv_output_extent_and_channel_check(rng):
    x = Tensor(rng.normal(size=(1, 2, 9, 9)))
    assert F.conv2d(x, Tensor(rng.normal(size=(5, 2, 3, 3))), stride=2).shape == (1, 5, 4, 4)
    with pytest.raises(ShapeError):
        F.conv2d(x, Tensor(rng.normal(size=(5, 3, 3, 3))))


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 0), (2, 1)])
def test_conv_gradients_match_central_differences(rng, stride, padding):
    w = Tensor(rng.normal(size=(3, 2, 3, 3)))
    b = Tensor(rng.normal(size=3))
    out_shape = F.conv2d(Tensor(np.zeros((1, 2, 6, 6))), w, b, stride, padding).shape
    projection = Tensor(rng.normal(size=out_shape))

    def wrt_input(t):
        return (F.conv2d(t, w, b, stride, padding) * projection).sum()

    assert finite_diff_check(wrt_input, Tensor(rng.normal(size=(1, 2, 6, 6)))) < 1e-6

    x = Tensor(rng.normal(size=(1, 2, 6, 6)))

    def wrt_weight(t):
        return (F.conv2d(x, t, b, stride, padding) * projection).sum()

    assert finite_diff_check(wrt_weight, w) < 1e-6


def test_conv_transpose_gradient(rng):
    w = Tensor(rng.normal(size=(2, 3, 2, 2)))
    projection = Tensor(rng.normal(size=(1, 3, 6, 6)))

    def f(t):
        return (F.conv_transpose2d(t, w, stride=2) * projection).sum()

    assert finite_diff_check(f, Tensor(rng.normal(size=(1, 2, 3, 3)))) < 1e-6


def test_max_pool_routes_gradient_to_window_maximum():
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4), requires_grad=True)
    out = F.pool(x, "max", window=2)
    np.testing.assert_array_equal(out.data[0, 0], [[5, 7], [13, 15]])
    backward(out.sum())
    expected = np.zeros((4, 4))
    expected[[1, 1, 3, 3], [1, 3, 1, 3]] = 1.0
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_average_pools(rng):
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    np.testing.assert_allclose(F.pool(Tensor(x), "avg", window=2).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    assert F.pool(Tensor(rng.normal(size=(3, 5, 4, 4))), "global_avg").shape == (3, 5)
    projection = Tensor(rng.normal(size=(1, 2, 4, 4)))

    def f(t):
        return (F.pool(t, "avg", window=3, stride=1, padding=1) * projection).sum()

    assert finite_diff_check(f, Tensor(rng.normal(size=(1, 2, 4, 4)))) < 1e-6
    with pytest.raises(ShapeError):
        F.pool(Tensor(x), "max", window=5)


def test_bilinear_resampling_keeps_corners_and_constants(rng):
    matrix = F.interpolation_matrix(5, 9, np.float64)
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0)
    x = Tensor(rng.normal(size=(1, 2, 4, 4)))
    up = F.upsample_bilinear(x, 2)
    assert up.shape == (1, 2, 8, 8)
    np.testing.assert_allclose(up.data[..., 0, 0], x.data[..., 0, 0])
    np.testing.assert_allclose(up.data[..., -1, -1], x.data[..., -1, -1])
    flat = F.resize_bilinear(Tensor(np.full((3, 3), 0.7)), (7, 5)).data
    np.testing.assert_allclose(flat, 0.7)
    assert F.resize_bilinear(x, (4, 4)) is x


def test_resize_gradient(rng):
    projection = Tensor(rng.normal(size=(1, 1, 7, 6)))

    def f(t):
        return (F.resize_bilinear(t, (7, 6)) * projection).sum()

    assert finite_diff_check(f, Tensor(rng.normal(size=(1, 1, 3, 4)))) < 1e-6


def test_instance_and_layer_norm_statistics(rng):
    x = Tensor(rng.normal(2.0, 3.0, size=(2, 3, 8, 8)))
    out = F.normalize(x, "instance").data
    np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=(2, 3)), 1.0, atol=1e-3)
    tokens = F.normalize(Tensor(rng.normal(size=(2, 5, 6))), "layer").data
    np.testing.assert_allclose(tokens.mean(axis=-1), 0.0, atol=1e-10)


def test_normalize_gradient(rng):
    projection = Tensor(rng.normal(size=(3, 2, 3, 3)))
    weight = Tensor(rng.normal(size=2))

    def f(t):
        return (F.normalize(t, "batch", weight) * projection).sum()

    assert finite_diff_check(f, Tensor(rng.normal(size=(3, 2, 3, 3)))) < 1e-3


def test_batch_norm_uses_running_statistics_in_eval(rng):
    norm = BatchNorm(3)
    x = rng.normal(1.0, 2.0, size=(4, 3, 5, 5)).astype(np.float32)
    norm.eval()
    np.testing.assert_allclose(norm(Tensor(x)).data, x / np.sqrt(1.0 + F.NORM_EPS), rtol=1e-5)
    norm.train()
    norm(Tensor(x))
    np.testing.assert_allclose(norm.running_mean, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-4)


def test_dropout_modes():
    x = Tensor(np.ones((200, 50), dtype=np.float32))
    assert F.dropout(x, 0.5, training=False) is x
    assert F.dropout(x, 0.0, training=True) is x
    first = Dropout(0.5, np.random.default_rng(9))(x).data
    second = Dropout(0.5, np.random.default_rng(9))(x).data
    np.testing.assert_array_equal(first, second)
    assert set(np.unique(first)) <= {0.0, 2.0}
    assert 0.45 < (first == 0).mean() < 0.55


def test_activations_gradients(rng):
    x = rng.uniform(0.1, 2.0, size=12) * rng.choice([-1.0, 1.0], size=12)
    projection = Tensor(rng.normal(size=12))
    for kind in ("relu", "leaky_relu", "sigmoid", "tanh", "softplus"):
        def f(t, kind=kind):
            return (F.activation(t, kind) * projection).sum()

        assert finite_diff_check(f, Tensor(x)) < 1e-4, kind

    positive = Tensor(rng.uniform(0.1, 2.0, size=12))
    assert finite_diff_check(lambda t: (F.gelu(t) * projection).sum(), positive) < 1e-4
    with pytest.raises(ValueError):
        F.activation(Tensor(x), "swish")


def test_softmax_rows_sum_to_one(rng):
    out = F.softmax(Tensor(rng.normal(size=(3, 5)) * 50.0), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0)
    assert np.isfinite(out).all()


def _projections(rng, width):
    return [(Tensor(rng.normal(size=(width, width)) / np.sqrt(width)), Tensor(rng.normal(size=width) * 0.1))
            for _ in range(4)]


def test_attention_ignores_padded_keys(rng):
    proj = _projections(rng, 4)
    q = Tensor(rng.normal(size=(1, 3, 4)))
    kv = rng.normal(size=(1, 3, 4))
    mask = np.array([[False, False, True]])
    out, weights = F.attention(q, Tensor(kv), Tensor(kv), 2, proj, key_padding_mask=mask, return_weights=True)
    np.testing.assert_allclose(weights.data[..., -1], 0.0)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0)
    changed = kv.copy()
    changed[0, -1] = 100.0
    again = F.attention(q, Tensor(changed), Tensor(changed), 2, proj, key_padding_mask=mask)
    np.testing.assert_allclose(again.data, out.data, atol=1e-12)
    with pytest.raises(ShapeError):
        F.attention(q, Tensor(kv), Tensor(kv), 3, proj)


def test_attention_gradient(rng):
    proj = _projections(rng, 4)
    projection = Tensor(rng.normal(size=(2, 3, 4)))

    def f(t):
        return (F.attention(t, t, t, 2, proj) * projection).sum()

    assert finite_diff_check(f, Tensor(rng.normal(size=(2, 3, 4)))) < 1e-3


def test_layer_factory_builds_each_kind():
    conv = build_layer(LayerSpec(kind=LayerKind.CONV, in_channels=1, out_channels=4, kernel=3, padding=1))
    assert conv(Tensor(np.zeros((2, 1, 8, 8), dtype=np.float32))).shape == (2, 4, 8, 8)
    attn = build_layer(LayerSpec(kind=LayerKind.ATTENTION, in_channels=8, out_channels=8, heads=2))
    assert isinstance(attn, MultiHeadAttention)
    up = build_layer(LayerSpec(kind=LayerKind.UPSAMPLE_BILINEAR, stride=2))
    assert up(Tensor(np.zeros((1, 1, 3, 3), dtype=np.float32))).shape == (1, 1, 6, 6)
    with pytest.raises(ValueError):
        LayerSpec(kind=LayerKind.ATTENTION, out_channels=6, heads=4)


def test_dropout_keeps_the_expectation():
    x = Tensor(np.ones(10_000))
    for rate in (0.1, 0.5, 0.75):
        dropped = F.dropout(x, rate, training=True, generator=np.random.default_rng(17)).data
        standard_error = np.sqrt(rate / (1.0 - rate) / dropped.size)
        assert abs(dropped.mean() - 1.0) <= 3.0 * standard_error


def _layer_functions(rng):
    conv_w = Tensor(rng.normal(size=(3, 2, 3, 3)))
    conv_b = Tensor(rng.normal(size=3))
    up_w = Tensor(rng.normal(size=(2, 3, 2, 2)))
    lin_w = Tensor(rng.normal(size=(2 * 6 * 6, 4)))
    norm_w = Tensor(rng.normal(size=2))
    weights = {
        "conv": rng.normal(size=(1, 3, 6, 6)),
        "conv_transpose": rng.normal(size=(1, 3, 12, 12)),
        "linear": rng.normal(size=(1, 4)),
        "instance": rng.normal(size=(1, 2, 6, 6)),
        "avg_pool": rng.normal(size=(1, 2, 3, 3)),
        "tanh": rng.normal(size=(1, 2, 6, 6)),
        "softplus": rng.normal(size=(1, 2, 6, 6)),
    }
    outputs = {
        "conv": lambda t: F.conv2d(t, conv_w, conv_b, 1, 1),
        "conv_transpose": lambda t: F.conv_transpose2d(t, up_w, stride=2),
        "linear": lambda t: F.linear(t.reshape(1, -1), lin_w),
        "instance": lambda t: F.normalize(t, "instance", norm_w),
        "avg_pool": lambda t: F.pool(t, "avg", window=2),
        "tanh": lambda t: F.tanh(t),
        "softplus": lambda t: F.softplus(t),
    }
    return {name: (lambda t, f=f, w=Tensor(weights[name]): (f(t) * w).sum()) for name, f in outputs.items()}


@pytest.mark.parametrize("seed", range(20))
def test_layer_gradients_match_central_differences_across_seeds(seed):
    rng = np.random.default_rng(seed)
    point = Tensor(rng.normal(size=(1, 2, 6, 6)))
    for name, f in _layer_functions(rng).items():
        assert finite_diff_check(f, point, epsilon=1e-5) < 1e-4, name
