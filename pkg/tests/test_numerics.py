from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provg import numerics as nx

from conftest import rand_tensor, rng_for


# -- forward examples -----------------------------------------------------

def test_sigmoid_at_zero():
    assert nx.sigmoid(nx.Tensor(0.0)).item() == pytest.approx(0.5)


def test_softmax_equal_entries():
    out = nx.softmax(nx.Tensor([3.0, 3.0, 3.0, 3.0]))
    np.testing.assert_allclose(out.data, [0.25, 0.25, 0.25, 0.25], rtol=1e-6)


def test_matmul_all_ones_row_sums():
    a = nx.Tensor(np.ones((2, 3)))
    b = nx.Tensor(np.ones((3, 1)))
    np.testing.assert_allclose((a @ b).data, [[3.0], [3.0]])


def test_forward_determinism_bit_identical(f64):
    rng = rng_for(11)
    x = rand_tensor(rng, (5, 7))
    w = rand_tensor(rng, (7, 3))

    def run():
        return nx.softmax(nx.matmul(nx.sigmoid(x), w)).data.tobytes()

    assert run() == run()


# -- backward examples ------------------------------------------------------

def test_square_gradient(f64):
    x = nx.Tensor(3.0, requires_grad=True)
    y = nx.power(x, 2.0)
    y.backward()
    assert x.grad == pytest.approx(6.0)


def test_sigmoid_gradient_at_zero(f64):
    x = nx.Tensor(0.0, requires_grad=True)
    nx.sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25)


def test_softmax_gradient_rows_sum_to_zero(f64):
    rng = rng_for(3)
    x = rand_tensor(rng, (6,))
    c = nx.Tensor(rng.normal(size=(6,)))
    y = nx.sum_reduce(nx.mul(nx.softmax(x), c))
    y.backward()
    assert abs(x.grad.sum()) < 1e-12
    # cross-check against central differences
    err = nx.grad_check(lambda t: nx.sum_reduce(nx.mul(nx.softmax(t), c)), [x])
    assert err <= 1e-8


def test_backward_seed_shape_mismatch():
    x = nx.Tensor([1.0, 2.0], requires_grad=True)
    y = nx.sigmoid(x)
    with pytest.raises(nx.ShapeMismatchError):
        y.backward(seed=np.ones((3,)))


def test_backward_without_graph_errors():
    x = nx.Tensor([1.0, 2.0])
    with pytest.raises(nx.GradientError):
        nx.sigmoid(x).backward(seed=np.ones(2))


def test_nonscalar_backward_needs_seed():
    x = nx.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(nx.GradientError):
        nx.sigmoid(x).backward()


# -- error contracts --------------------------------------------------------

def test_shape_mismatch_names_op():
    a = nx.Tensor(np.ones((2, 3)))
    b = nx.Tensor(np.ones((4, 5)))
    with pytest.raises(nx.ShapeMismatchError, match="matmul"):
        nx.matmul(a, b)


def test_nonfinite_names_op():
    with pytest.raises(nx.NonFiniteValueError, match="log"):
        nx.log(nx.Tensor([0.0]))


def test_conv_rejects_bad_weight_rows():
    x = nx.Tensor(np.ones((16, 3)))
    w = nx.Tensor(np.ones((10, 4)))
    with pytest.raises(nx.ShapeMismatchError, match="conv"):
        nx.conv2d(x, 4, 4, w, ksize=3, pad=1)


def test_grad_check_refuses_32bit():
    x = nx.Tensor(1.0, requires_grad=True)
    with pytest.raises(nx.GradientError):
        nx.grad_check(lambda t: nx.power(t, 2.0), [x])


# -- grad_check oracle cases -------------------------------------------------

def test_grad_check_identity_is_zero(f64):
    # dyadic point and step keep the central difference exact in binary fp
    x = nx.Tensor(0.5, requires_grad=True)
    assert nx.grad_check(lambda t: nx.mul(t, 1.0), [x], step=2.0 ** -13) == 0.0


def test_grad_check_linear_layer(f64):
    rng = rng_for(5)
    w = rand_tensor(rng, (4, 3))
    b = rand_tensor(rng, (3,))
    x = nx.Tensor(rng.normal(size=(2, 4)))
    err = nx.grad_check(lambda w_, b_: nx.sum_reduce(nx.linear(x, w_, b_)), [w, b])
    assert err <= 1e-6


# -- per-primitive gradient integrity (10 random points each) ---------------

def _check_op(op_fn, params, seed, tol=1e-6):
    """Probe the op output with a fixed random covector and grad-check."""
    out_shape = op_fn(*params).shape
    probe = nx.Tensor(rng_for(seed ^ 0x5EED).normal(size=out_shape))

    def fn(*ps):
        return nx.sum_reduce(nx.mul(op_fn(*ps), probe))

    return nx.grad_check(fn, params)


PRIMITIVE_CASES = {
    "add": lambda a, b: nx.add(a, b),
    "add-broadcast": lambda a, b: nx.add(a, nx.reshape(nx.mean_reduce(b, axis=0, keepdims=True), (1, 4))),
    "multiply": lambda a, b: nx.mul(a, b),
    "maximum": lambda a, b: nx.maximum(a, b),
    "minimum": lambda a, b: nx.minimum(a, b),
    "relu": lambda a, b: nx.relu(a),
    "sigmoid": lambda a, b: nx.sigmoid(a),
    "exp": lambda a, b: nx.exp(a),
    "softmax": lambda a, b: nx.softmax(a, axis=-1),
    "matmul": lambda a, b: nx.matmul(a, nx.transpose(b)),
    "transpose": lambda a, b: nx.transpose(a),
    "reshape": lambda a, b: nx.reshape(a, (4, 3)),
    "concat": lambda a, b: nx.concat([a, b], axis=1),
    "stack": lambda a, b: nx.stack([a, b], axis=0),
    "slice": lambda a, b: nx.slice_axis(a, 1, 3, axis=0),
    "mean-reduce": lambda a, b: nx.mean_reduce(a, axis=1, keepdims=True),
    "sum-reduce": lambda a, b: nx.sum_reduce(a, axis=0),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(f64, name):
    op = PRIMITIVE_CASES[name]
    for point in range(10):
        seed = sum(map(ord, name)) * 37 + point
        rng = rng_for(seed)
        a = rand_tensor(rng, (3, 4))
        b = rand_tensor(rng, (3, 4))
        err = _check_op(op, [a, b], seed)
        assert err <= 1e-6, f"{name} point {point}: {err}"


def test_log_power_gradients(f64):
    for point in range(10):
        rng = rng_for(200 + point)
        a = nx.Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        assert _check_op(nx.log, [a], 200 + point) <= 1e-6
        assert _check_op(lambda a_: nx.power(a_, -0.5), [a], 250 + point) <= 1e-6


def test_gather_rows_gradient(f64):
    for point in range(10):
        rng = rng_for(300 + point)
        table = rand_tensor(rng, (6, 3))
        ids = rng.integers(0, 6, size=5)
        assert _check_op(lambda t: nx.gather_rows(t, ids), [table], 300 + point) <= 1e-6


def test_conv2d_gradient(f64):
    for point in range(10):
        rng = rng_for(400 + point)
        x = rand_tensor(rng, (16, 3))          # 4x4 map, 3 channels
        w = rand_tensor(rng, (27, 2))          # 3x3 kernel -> 2 channels
        b = rand_tensor(rng, (2,))
        err = _check_op(
            lambda x_, w_, b_: nx.conv2d(x_, 4, 4, w_, b_, ksize=3, stride=1, pad=1),
            [x, w, b], 400 + point)
        assert err <= 1e-6


def test_conv2d_strided_gradient(f64):
    for point in range(10):
        rng = rng_for(500 + point)
        x = rand_tensor(rng, (36, 2))          # 6x6 map
        w = rand_tensor(rng, (18, 3))          # 3x3 kernel stride 2
        err = _check_op(
            lambda x_, w_: nx.conv2d(x_, 6, 6, w_, ksize=3, stride=2, pad=1),
            [x, w], 500 + point)
        assert err <= 1e-6


def test_depthwise_conv_gradient(f64):
    for point in range(10):
        rng = rng_for(600 + point)
        x = rand_tensor(rng, (16, 3))
        w = rand_tensor(rng, (9, 3))
        b = rand_tensor(rng, (3,))
        err = _check_op(
            lambda x_, w_, b_: nx.depthwise_conv3x3(x_, 4, 4, w_, b_),
            [x, w, b], 600 + point)
        assert err <= 1e-6


def test_upsample2x_gradient(f64):
    for point in range(10):
        rng = rng_for(700 + point)
        x = rand_tensor(rng, (4, 3))           # 2x2 map
        assert _check_op(lambda x_: nx.upsample2x(x_, 2, 2), [x], 700 + point) <= 1e-6


def test_layer_norm_gradient(f64):
    for point in range(10):
        rng = rng_for(900 + point)
        x = rand_tensor(rng, (3, 5))
        gamma = rand_tensor(rng, (5,))
        beta = rand_tensor(rng, (5,))
        assert _check_op(nx.layer_norm, [x, gamma, beta], 900 + point) <= 1e-6


def test_layer_norm_normalises_rows():
    rng = rng_for(77)
    x = nx.Tensor(rng.normal(2.0, 3.0, (4, 8)))
    out = nx.layer_norm(x, nx.Tensor(np.ones(8)), nx.Tensor(np.zeros(8)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)


def test_matmul_batched_gradient(f64):
    for point in range(10):
        rng = rng_for(800 + point)
        a = rand_tensor(rng, (2, 3, 4))
        b = rand_tensor(rng, (2, 4, 3))
        assert _check_op(nx.matmul, [a, b], 800 + point) <= 1e-6


# -- shape and structural properties -----------------------------------------

@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 5), cols=st.integers(1, 5), seed=st.integers(0, 2**16))
def test_adjoint_shape_law(rows, cols, seed):
    with nx.precision(64):
        rng = rng_for(seed)
        x = rand_tensor(rng, (rows, cols))
        w = rand_tensor(rng, (cols, 2))
        out = nx.sum_reduce(nx.sigmoid(nx.matmul(x, w)))
        out.backward()
        assert x.grad.shape == x.shape
        assert w.grad.shape == w.shape


def test_upsample_forward_values():
    x = nx.Tensor(np.arange(4.0).reshape(4, 1))   # 2x2 one-channel map
    out = nx.upsample2x(x, 2, 2)
    expect = np.array([0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3], dtype=float)
    np.testing.assert_allclose(out.data[:, 0], expect)


def test_conv_identity_kernel():
    rng = rng_for(9)
    x = nx.Tensor(rng.normal(size=(16, 2)))
    w = np.zeros((18, 2))
    w[4 * 2 + 0, 0] = 1.0     # centre tap of 3x3 window, channel 0 -> out 0
    w[4 * 2 + 1, 1] = 1.0
    out = nx.conv2d(x, 4, 4, nx.Tensor(w), ksize=3, stride=1, pad=1)
    np.testing.assert_allclose(out.data, x.data, atol=1e-7)


def test_precision_modes_change_dtype():
    with nx.precision(64):
        assert nx.Tensor([1.0]).data.dtype == np.float64
    with nx.precision(32):
        assert nx.Tensor([1.0]).data.dtype == np.float32
