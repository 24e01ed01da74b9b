import numpy as np
import pytest
from hypothesis import given, strategies as st

from rganet import kernels, ops
from rganet.gradcheck import gradcheck
from rganet.tensor import Tape, Tensor, backward

from oracles import (conv2d_naive, conv_transpose2d_naive, depthwise_naive, dft2_naive, gelu_erf,
                     layer_norm_naive, softmax_longdouble)

RNG = np.random.default_rng(2024)


def rand(*shape):
    return RNG.standard_normal(shape)


# ---------------------------------------------------------------- conv2d

def test_conv2d_identity_kernel():
    x = rand(1, 1, 5, 7)
    out = ops.conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1)).data
    np.testing.assert_array_equal(out, x)


def test_conv2d_counting():
    out = ops.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1)).data
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 9.0


def test_conv2d_matches_loop_oracle():
    x, w, b = rand(2, 3, 6, 5), rand(4, 3, 3, 3), rand(4)
    got = ops.conv2d(x, w, b, stride=2, pad=1).data
    np.testing.assert_allclose(got, conv2d_naive(x, w, b, 2, 1), rtol=0, atol=1e-12)


@pytest.mark.parametrize("case", range(6))
def test_conv2d_random_shapes(case):
    rng = np.random.default_rng(case)
    ci, co, k = rng.integers(1, 4), rng.integers(1, 4), int(rng.choice([1, 2, 3]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = rng.standard_normal((1, ci, rng.integers(k, 8), rng.integers(k, 8)))
    w, b = rng.standard_normal((co, ci, k, k)), rng.standard_normal(co)
    np.testing.assert_allclose(ops.conv2d(x, w, b, stride, pad).data, conv2d_naive(x, w, b, stride, pad),
                               rtol=1e-9, atol=1e-12)


def test_conv2d_errors():
    with pytest.raises(ops.ShapeError):
        ops.conv2d(rand(1, 2, 4, 4), rand(3, 3, 3, 3))
    with pytest.raises(ops.ShapeError):
        ops.conv2d(rand(1, 1, 2, 2), rand(1, 1, 3, 3))


# ---------------------------------------------------------------- conv_transpose2d

def test_conv_transpose_identity_and_spread():
    x = rand(1, 2, 3, 4)
    eye = np.eye(2).reshape(2, 2, 1, 1)
    np.testing.assert_array_equal(ops.conv_transpose2d(x, eye).data, x)
    out = ops.conv_transpose2d(np.ones((1, 1, 1, 1)), np.ones((1, 1, 2, 2)), stride=2).data
    np.testing.assert_array_equal(out, np.ones((1, 1, 2, 2)))


def test_conv_transpose_oracle():
    x, w, b = rand(2, 3, 4, 3), rand(3, 2, 2, 2), rand(2)
    np.testing.assert_allclose(ops.conv_transpose2d(x, w, b, stride=2).data,
                               conv_transpose2d_naive(x, w, b, 2), atol=1e-12)


@pytest.mark.parametrize("stride,k", [(1, 3), (2, 2), (2, 3)])
def test_conv_adjoint_identity(stride, k):
    x, w = rand(2, 3, 7, 6), rand(4, 3, k, k)
    y_shape = ops.conv2d(x, w, stride=stride).shape
    y = rand(*y_shape)
    lhs = np.sum(ops.conv2d(x, w, stride=stride).data * y)
    xt = ops.conv_transpose2d(y, w, stride=stride).data
    rhs = np.sum(x[:, :, :xt.shape[2], :xt.shape[3]] * xt)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


# ---------------------------------------------------------------- depthwise

def test_depthwise_center_tap_is_identity():
    x = rand(2, 3, 5, 6)
    w = np.zeros((3, 1, 3, 3))
    w[:, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.depthwise_conv2d(x, w, pad=1).data, x)


def test_depthwise_zero():
    out = ops.depthwise_conv2d(rand(1, 3, 4, 4), np.zeros((3, 1, 3, 3)), np.zeros(3), pad=1).data
    assert not out.any()


def test_depthwise_oracle():
    x, w, b = rand(2, 4, 6, 7), rand(4, 1, 3, 3), rand(4)
    np.testing.assert_allclose(ops.depthwise_conv2d(x, w, b, pad=1).data, depthwise_naive(x, w, b, 1),
                               atol=1e-12)


def test_depthwise_fp32_tolerance():
    x, w = rand(1, 5, 9, 8), rand(5, 1, 3, 3)
    got = ops.depthwise_conv2d(x.astype(np.float32), w.astype(np.float32), pad=1).data
    assert got.dtype == np.float32
    ref = depthwise_naive(x, w, None, 1)
    assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) <= 1e-5


# ---------------------------------------------------------------- layer_norm

def test_layer_norm_standardizes():
    x = rand(2, 6, 3, 4)
    y = ops.layer_norm(x, np.ones(6), np.zeros(6)).data
    assert np.max(np.abs(y.mean(axis=1))) <= 1e-7
    assert np.max(np.abs(y.var(axis=1) - 1)) <= 1e-5 * 1e3  # eps = 1e-5 shrinks variance a little
    x_big = rand(2, 6, 3, 4) * 100
    y = ops.layer_norm(x_big, np.ones(6), np.zeros(6)).data
    assert np.max(np.abs(y.var(axis=1) - 1)) <= 1e-5


def test_layer_norm_constant_site():
    x = np.full((1, 4, 2, 2), 3.0)
    assert not ops.layer_norm(x, rand(4), np.zeros(4)).data.any()


def test_layer_norm_oracle():
    x, g, b = rand(2, 5, 3, 4), rand(5), rand(5)
    np.testing.assert_allclose(ops.layer_norm(x, g, b).data, layer_norm_naive(x, g, b), atol=1e-10)


# ---------------------------------------------------------------- softmax

def test_softmax_basic():
    np.testing.assert_allclose(ops.softmax(np.full((1, 5), 2.5)).data, np.full((1, 5), 0.2))
    x = rand(4, 9)
    np.testing.assert_allclose(ops.softmax(x + 123.0).data, ops.softmax(x).data, atol=1e-12)
    np.testing.assert_allclose(ops.softmax(x).data, softmax_longdouble(x), atol=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_are_distributions(row):
    p = ops.softmax(np.array([row])).data
    assert np.all(p >= 0) and np.all(p <= 1)
    assert abs(p.sum() - 1) <= 1e-6


# ---------------------------------------------------------------- fft

def test_fft_dc_and_impulse():
    x = np.full((1, 1, 5, 6), 2.0)
    X = ops.fft2(x)
    assert abs(X[0, 0, 0, 0] - 60.0) <= 1e-9
    X[0, 0, 0, 0] = 0
    assert np.max(np.abs(X)) <= 1e-9
    imp = np.zeros((1, 1, 4, 7))
    imp[0, 0, 0, 0] = 1
    np.testing.assert_allclose(ops.fft2(imp), np.ones((1, 1, 4, 7)), atol=1e-12)


def test_fft_naive_dft():
    x = rand(1, 2, 6, 10)
    ref = dft2_naive(x)
    assert np.max(np.abs(ops.fft2(x) - ref)) / np.max(np.abs(ref)) <= 1e-9


def test_fft_hermitian_and_roundtrip():
    x = rand(1, 2, 5, 7)
    X = ops.fft2(x)
    u, v = np.meshgrid(np.arange(5), np.arange(7), indexing="ij")
    np.testing.assert_allclose(X, np.conj(X[..., (-u) % 5, (-v) % 7]), atol=1e-10)
    np.testing.assert_allclose(ops.ifft2(X), x, atol=1e-12)
    parseval = np.sum(np.abs(X) ** 2) / 35
    assert abs(parseval - np.sum(x ** 2)) <= 1e-6 * np.sum(x ** 2)


# ---------------------------------------------------------------- elementwise

def test_sigmoid_gelu():
    assert ops.sigmoid(np.array(0.0)).data == 0.5
    x = rand(50) * 10
    np.testing.assert_allclose(ops.sigmoid(x).data + ops.sigmoid(-x).data, 1.0, atol=1e-12)
    assert ops.gelu(np.array(0.0)).data == 0.0
    np.testing.assert_allclose(ops.gelu(x).data, gelu_erf(x), atol=1e-7)


def test_ops_are_pure():
    x, w = rand(1, 3, 8, 8), rand(4, 3, 3, 3)
    a = ops.conv2d(x, w, pad=1).data
    b = ops.conv2d(x, w, pad=1).data
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- autodiff

def test_backward_sum_is_ones():
    x = Tensor(rand(3, 4), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(x)
    backward(tape, loss, [x])
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_unused_param_zero():
    x = Tensor(rand(3), requires_grad=True)
    unused = Tensor(rand(2), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.square(x))
    backward(tape, loss, [x, unused])
    assert unused.grad is not None and not unused.grad.any()


def test_backward_non_scalar_rejected():
    x = Tensor(rand(3), requires_grad=True)
    with Tape() as tape:
        y = ops.square(x)
    with pytest.raises(ValueError):
        backward(tape, y, [x])


def test_backward_conv_half_square():
    x, w = rand(1, 2, 5, 5), rand(3, 2, 3, 3)
    err = gradcheck(lambda a, b: ops.mul(0.5, ops.sum(ops.square(ops.conv2d(a, b, pad=1)))), [x, w])
    assert err <= 1e-5


def test_gradcheck_quadratic():
    assert gradcheck(lambda a: ops.sum(ops.mul(ops.square(a), 3.0)), [rand(4, 3)]) <= 1e-8


def test_no_graph_outside_tape():
    x = Tensor(rand(3), requires_grad=True)
    y = ops.square(x)
    with Tape() as tape:
        pass
    assert len(tape.nodes) == 0 and isinstance(y, Tensor)


# ---------------------------------------------------------------- kernel backends

@pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled kernels not built")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree(dtype):
    ref, fast = kernels.get_backend("numpy"), kernels.get_backend("cython")
    xp = rand(2, 6, 10, 9).astype(dtype)
    w = rand(6, 3, 3).astype(dtype)
    a = ref.depthwise_forward(xp, w, 8, 7)
    b = fast.depthwise_forward(xp, w, 8, 7)
    np.testing.assert_allclose(a, b, rtol=1e-5 if dtype == np.float32 else 1e-12)
    g = rand(2, 6, 8, 7).astype(dtype)
    for u, v in zip(ref.depthwise_backward(g, xp, w), fast.depthwise_backward(g, xp, w)):
        np.testing.assert_allclose(u, v, rtol=1e-4 if dtype == np.float32 else 1e-10, atol=1e-5)
    gcols = rand(2, 3, 4, 4, 3, 3).astype(dtype)
    np.testing.assert_allclose(ref.col2im(gcols, (2, 3, 6, 6), 1), fast.col2im(gcols, (2, 3, 6, 6), 1),
                               rtol=1e-5)
