import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from distilvad import functional as F
from distilvad.exceptions import ShapeError
from distilvad.gradcheck import grad_check
from distilvad.tensor import Tape, Tensor, tsum

SEEDS = range(20)


def naive_conv(x, w, b, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, _, h, wd = xp.shape
    o, _, kh, kw = w.shape
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (1, 1)])
def test_conv2d_matches_direct_loop(stride, padding):
    r = np.random.default_rng(0)
    x, w, b = r.normal(size=(2, 3, 7, 7)), r.normal(size=(4, 3, 3, 3)), r.normal(size=4)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, naive_conv(x, w, b, stride, padding), atol=1e-12)


def test_depthwise_conv_is_per_channel():
    r = np.random.default_rng(1)
    x, w = r.normal(size=(1, 3, 5, 5)), r.normal(size=(3, 1, 3, 3))
    out = F.conv2d(Tensor(x), Tensor(w), None, padding=1, groups=3).data
    for c in range(3):
        expected = naive_conv(x[:, c:c + 1], w[c:c + 1], 0.0, 1, 1)
        np.testing.assert_allclose(out[:, c:c + 1], expected, atol=1e-12)


def test_pointwise_conv_is_channel_matmul():
    r = np.random.default_rng(2)
    x, w, b = r.normal(size=(2, 3, 4, 4)), r.normal(size=(5, 3, 1, 1)), r.normal(size=5)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    expected = np.einsum("nchw,oc->nohw", x, w[:, :, 0, 0]) + b.reshape(1, -1, 1, 1)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv_transpose_is_adjoint_of_conv():
    r = np.random.default_rng(3)
    x, w, y = r.normal(size=(1, 2, 7, 7)), r.normal(size=(3, 2, 3, 3)), r.normal(size=(1, 3, 4, 4))
    forward = F.conv2d(Tensor(x), Tensor(w), None, stride=2, padding=1).data
    adjoint = F.conv_transpose2d(Tensor(y), Tensor(w), None, stride=2, padding=1).data
    assert adjoint.shape == x.shape
    np.testing.assert_allclose(np.sum(forward * y), np.sum(x * adjoint), rtol=1e-10)


def test_conv_transpose_output_padding_restores_even_size():
    # a stride-2 conv maps 8 -> 4; transposing 4 gives 7 unless one row is added
    out = F.conv_transpose2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), None,
                             stride=2, padding=1, output_padding=1)
    assert out.shape == (1, 1, 8, 8)
    with pytest.raises(ShapeError):
        F.conv_transpose2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), None,
                           stride=2, padding=1, output_padding=2)


def test_conv_shape_errors_name_axis():
    with pytest.raises(ShapeError) as err:
        F.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((3, 4, 3, 3))))
    assert err.value.axis == "channels"
    with pytest.raises(ShapeError) as err:
        F.conv2d(Tensor(np.ones((1, 2, 2, 5))), Tensor(np.ones((3, 2, 3, 3))))
    assert err.value.axis == "height"
    with pytest.raises(ShapeError) as err:
        F.conv2d(Tensor(np.ones((2, 5, 5))), Tensor(np.ones((3, 2, 3, 3))))
    assert err.value.axis == "rank"


def test_batch_norm_training_statistics():
    r = np.random.default_rng(4)
    x = r.normal(loc=3.0, scale=2.0, size=(4, 2, 3, 3))
    mean, var = np.zeros(2), np.ones(2)
    out = F.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), mean, var, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    np.testing.assert_allclose(mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(var, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))


def test_batch_norm_eval_uses_running_statistics():
    x = np.full((1, 1, 2, 2), 5.0)
    out = F.batch_norm2d(Tensor(x), Tensor(np.array([2.0])), Tensor(np.array([1.0])),
                         np.array([1.0]), np.array([4.0]), training=False, eps=0.0).data
    np.testing.assert_allclose(out, 2.0 * (5.0 - 1.0) / 2.0 + 1.0)


def test_adaptive_partition_uses_floor_bounds():
    assert F.adaptive_partition(5, 2) == [(0, 2), (2, 5)]
    assert F.adaptive_partition(4, 4) == [(0, 1), (1, 2), (2, 3), (3, 4)]


def test_adaptive_max_pool_values():
    x = np.arange(25, dtype=float).reshape(1, 1, 5, 5)
    out = F.adaptive_max_pool2d(Tensor(x), 2, 2).data
    np.testing.assert_array_equal(out[0, 0], [[6, 9], [21, 24]])
    np.testing.assert_array_equal(F.adaptive_max_pool2d(Tensor(x), 1, 1).data.ravel(), [24])


def test_adaptive_max_pool_rejects_upsampling():
    with pytest.raises(ShapeError):
        F.adaptive_max_pool2d(Tensor(np.ones((1, 1, 2, 2))), 4, 4)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (1, 1, 6, 6), elements=st.floats(-10, 10)),
       st.sampled_from([(1, 1), (2, 3), (3, 3), (4, 4), (6, 6)]))
def test_adaptive_max_pool_preserves_global_max(x, size):
    out = F.adaptive_max_pool2d(Tensor(x), *size).data
    assert out.max() == x.max()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (1, 1, 5, 5), elements=st.floats(-10, 10)),
       arrays(np.float64, (1, 1, 5, 5), elements=st.floats(0, 5)))
def test_adaptive_max_pool_is_monotone(x, bump):
    low = F.adaptive_max_pool2d(Tensor(x), 2, 2).data
    high = F.adaptive_max_pool2d(Tensor(x + bump), 2, 2).data
    assert np.all(high >= low)


def test_upsample_nearest_repeats_blocks():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = F.upsample_nearest2d(Tensor(x), 2).data
    np.testing.assert_array_equal(out[0, 0, :2, :2], 1.0)
    np.testing.assert_array_equal(out[0, 0, 2:, 2:], 4.0)
    assert F.upsample_nearest2d(Tensor(x), 1, 1).shape == (1, 1, 2, 2)


def test_bce_with_logits_is_stable():
    z = Tensor(np.array([-100.0, 100.0, 0.0]))
    assert np.isfinite(F.bce_with_logits(z, 1.0).item())
    assert np.isfinite(F.bce_with_logits(z, 0.0).item())
    np.testing.assert_allclose(F.bce_with_logits(Tensor(np.array([0.0])), 1.0).item(), np.log(2.0))
    np.testing.assert_allclose(F.bce_with_logits(Tensor(np.array([100.0])), 0.0).item(), 100.0)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        F.mse_loss(Tensor(np.ones((2, 2))), np.ones((2, 3)))


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_gradients(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=(2, 2, 5, 5)))
    w = Tensor(r.normal(size=(3, 2, 3, 3)))
    b = Tensor(r.normal(size=3))
    for stride, padding, size in ((1, 0, 3), (2, 1, 3)):
        probe = Tensor(r.normal(size=(2, 3, size, size)))
        report = grad_check(lambda t: tsum(F.conv2d(t, w, b, stride, padding) * probe), x)
        assert report.passed, report
    probe = Tensor(r.normal(size=(2, 3, 3, 3)))
    assert grad_check(lambda t: tsum(F.conv2d(x, t, b, 2, 1) * probe), w).passed
    assert grad_check(lambda t: tsum(F.conv2d(x, w, t, 2, 1) * probe), b).passed


@pytest.mark.parametrize("seed", SEEDS)
def test_depthwise_and_pointwise_gradients(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=(2, 3, 4, 4)))
    dw = Tensor(r.normal(size=(3, 1, 3, 3)))
    pw = Tensor(r.normal(size=(2, 3, 1, 1)))
    probe = Tensor(r.normal(size=(2, 2, 2, 2)))
    report = grad_check(lambda t: tsum(F.conv2d(F.conv2d(t, dw, None, 2, 1, groups=3), pw) * probe), x)
    assert report.passed, report
    report = grad_check(lambda t: tsum(F.conv2d(F.conv2d(x, t, None, 2, 1, groups=3), pw) * probe), dw)
    assert report.passed, report
    report = grad_check(lambda t: tsum(F.conv2d(F.conv2d(x, dw, None, 2, 1, groups=3), t) * probe), pw)
    assert report.passed, report


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_transpose_gradients(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=(1, 2, 3, 3)))
    w = Tensor(r.normal(size=(2, 3, 3, 3)))
    b = Tensor(r.normal(size=3))
    probe = Tensor(r.normal(size=(1, 3, 6, 6)))
    report = grad_check(lambda t: tsum(F.conv_transpose2d(t, w, b, 2, 1, 1) * probe), x)
    assert report.passed, report
    report = grad_check(lambda t: tsum(F.conv_transpose2d(x, t, b, 2, 1, 1) * probe), w)
    assert report.passed, report


@pytest.mark.parametrize("seed", SEEDS)
def test_batch_norm_gradients(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=(3, 2, 2, 2)))
    gamma = Tensor(r.normal(size=2))
    beta = Tensor(r.normal(size=2))
    probe = Tensor(r.normal(size=(3, 2, 2, 2)))

    def loss(t, training):
        return tsum(F.batch_norm2d(t, gamma, beta, np.zeros(2), np.ones(2), training) * probe)

    for training in (True, False):
        report = grad_check(lambda t: loss(t, training), x)
        assert report.passed, report
    report = grad_check(lambda t: tsum(F.batch_norm2d(x, t, beta, np.zeros(2), np.ones(2), True) * probe),
                        gamma)
    assert report.passed, report


@pytest.mark.parametrize("seed", SEEDS)
def test_pooling_and_upsampling_gradients(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=(1, 2, 5, 5)))
    probe = Tensor(r.normal(size=(1, 2, 2, 2)))
    report = grad_check(lambda t: tsum(F.adaptive_max_pool2d(t, 2, 2) * probe), x)
    assert report.passed, report
    small = Tensor(r.normal(size=(1, 1, 2, 2)))
    up_probe = Tensor(r.normal(size=(1, 1, 6, 6)))
    report = grad_check(lambda t: tsum(F.upsample_nearest2d(t, 3) * up_probe), small)
    assert report.passed, report


@pytest.mark.parametrize("seed", SEEDS)
def test_loss_gradients(seed):
    r = np.random.default_rng(seed)
    pred = Tensor(r.normal(size=(2, 1, 3, 3)))
    target = r.normal(size=(2, 1, 3, 3))
    assert grad_check(lambda t: F.mse_loss(t, target), pred).passed
    logits = Tensor(r.normal(scale=3.0, size=(4,)))
    assert grad_check(lambda t: F.bce_with_logits(t, 1.0), logits).passed
    assert grad_check(lambda t: F.bce_with_logits(t, 0.0), logits).passed
    x = Tensor(r.normal(size=(3, 4)))
    w = Tensor(r.normal(size=(5, 4)))
    b = Tensor(r.normal(size=5))
    assert grad_check(lambda t: tsum(F.linear(t, w, b).square()), x).passed


def test_linear_feature_mismatch():
    with pytest.raises(ShapeError) as err:
        F.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    assert err.value.axis == "features"


def test_gradient_reaches_only_recorded_inputs():
    x = Tensor(np.ones((1, 1, 3, 3)), requires_grad=True)
    w = Tensor(np.ones((1, 1, 3, 3)))
    with Tape() as tape:
        loss = tsum(F.conv2d(x, w))
    tape.backward(loss)
    assert w.grad is None
    np.testing.assert_array_equal(x.grad, np.ones((1, 1, 3, 3)))
