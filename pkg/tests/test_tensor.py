import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asgnn_sr import tensor as T
from asgnn_sr.errors import ConfigurationError, DimensionError, NonFiniteError
from asgnn_sr.tensor import Tensor, grad_check

from reference import naive_conv2d, naive_matmul


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


# ----------------------------------------------------------------- conv2d

def test_conv2d_ones_center_and_corner():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1).data
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == out[0, 0, 0, 2] == out[0, 0, 2, 0] == out[0, 0, 2, 2] == 4.0
    np.testing.assert_array_equal(out, naive_conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), padding=1))


@pytest.mark.parametrize("k", [1, 3, 5])
def test_identity_kernel_is_bit_exact(k):
    x = rng(1).uniform(-1, 1, (2, 3, 6, 5))
    w = np.zeros((3, 3, k, k))
    for c in range(3):
        w[c, c, k // 2, k // 2] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w), padding=k // 2).data
    assert np.array_equal(out, x)


def test_grouped_depthwise_scaling():
    x = rng(2).uniform(-1, 1, (1, 2, 2, 2))
    out = T.conv2d(Tensor(x), Tensor(np.full((2, 1, 1, 1), 2.0)), groups=2).data
    np.testing.assert_array_equal(out, 2 * x)


@pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (2, 2, 2), (1, 1, 4)])
def test_conv2d_matches_naive_loop(stride, padding, groups):
    r = rng(3)
    x = r.uniform(-1, 1, (2, 4, 7, 6))
    w = r.uniform(-1, 1, (8, 4 // groups, 3, 3))
    b = r.uniform(-1, 1, 8)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding, groups=groups).data
    ref = naive_conv2d(x, w, b, stride=stride, padding=padding, groups=groups)
    assert out.shape == ref.shape == (2, 8, (7 + 2 * padding - 3) // stride + 1, (6 + 2 * padding - 3) // stride + 1)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_errors():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    with pytest.raises(ConfigurationError):
        T.conv2d(x, Tensor(np.zeros((4, 1, 3, 3))), groups=2)
    with pytest.raises(DimensionError, match="axis 1"):
        T.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))))
    with pytest.raises(ConfigurationError):
        T.conv2d(x, Tensor(np.zeros((3, 3, 2, 2))))


@pytest.mark.parametrize("stride,padding,groups", [(1, 1, 1), (2, 1, 1), (1, 2, 2)])
def test_conv2d_gradcheck(stride, padding, groups):
    r = rng(4)
    arrays = [r.uniform(-1, 1, (2, 4, 5, 5)), r.uniform(-1, 1, (4, 4 // groups, 3, 3)), r.uniform(-1, 1, 4)]
    err = grad_check(lambda x, w, b: T.conv2d(x, w, b, stride=stride, padding=padding, groups=groups), arrays)
    assert err <= 1e-6


# ----------------------------------------------------------------- softmax

def test_softmax_examples():
    out = T.softmax(Tensor(np.zeros((1, 1, 1, 2))), "spatial").data.ravel()
    np.testing.assert_array_equal(out, [0.5, 0.5])
    out = T.softmax(Tensor(np.array([math.log(2), 0.0]).reshape(1, 1, 1, 2)), "spatial").data.ravel()
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-15)
    out = T.softmax(Tensor(np.array([math.log(2), 0.0]).reshape(1, 2, 1, 1)), "channel").data.ravel()
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (2, 3, 3, 4), elements=st.floats(-50, 50)), st.floats(-100, 100),
       st.sampled_from(["spatial", "channel"]))
def test_softmax_normalised_and_shift_invariant(x, c, axis):
    y = T.softmax(Tensor(x), axis).data
    red = (2, 3) if axis == "spatial" else 1
    np.testing.assert_allclose(y.sum(axis=red), 1.0, atol=1e-12)
    assert np.all((y >= 0) & (y <= 1))
    np.testing.assert_allclose(T.softmax(Tensor(x + c), axis).data, y, atol=1e-12)


def test_softmax_errors():
    with pytest.raises(DimensionError):
        T.softmax(Tensor(np.zeros((1, 2, 0, 3))), "spatial")
    with pytest.raises(ConfigurationError):
        T.softmax(Tensor(np.zeros((1, 2, 2, 2))), "rows")


@pytest.mark.parametrize("axis", ["spatial", "channel"])
def test_softmax_gradcheck(axis):
    assert grad_check(lambda x: T.mul(T.softmax(x, axis), x), [rng(5).uniform(-1, 1, (2, 3, 2, 3))]) <= 1e-6


# ----------------------------------------------------------------- pixel shuffle

def test_pixel_shuffle_definition():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
    np.testing.assert_array_equal(T.pixel_shuffle(Tensor(x), 2).data[0, 0], [[1, 2], [3, 4]])
    assert T.pixel_shuffle(Tensor(np.zeros((1, 8, 2, 3))), 2).shape == (1, 2, 4, 6)


def test_pixel_shuffle_index_mapping():
    r, x = 3, rng(6).uniform(size=(2, 18, 2, 3))
    out = T.pixel_shuffle(Tensor(x), r).data
    for n in range(2):
        for c in range(2):
            for y in range(6):
                for xx in range(9):
                    assert out[n, c, y, xx] == x[n, c * r * r + (y % r) * r + (xx % r), y // r, xx // r]


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_pixel_shuffle_roundtrip(r, c, h, w):
    x = rng(c * 100 + h).uniform(size=(1, c * r * r, h, w))
    assert np.array_equal(T.pixel_unshuffle(T.pixel_shuffle(Tensor(x), r), r).data, x)


def test_pixel_shuffle_errors_and_grad():
    with pytest.raises(ConfigurationError):
        T.pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)
    x = rng(7).uniform(-1, 1, (1, 8, 2, 2))
    w = rng(8).uniform(-1, 1, (1, 2, 4, 4))
    assert grad_check(lambda a: T.mul(T.pixel_shuffle(a, 2), Tensor(w)), [x]) <= 1e-6


# ----------------------------------------------------------------- matmul

def test_matmul_examples():
    H = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    out = T.matmul(Tensor(H), Tensor(H.T)).data
    np.testing.assert_array_equal(out, [[1, 0, 1], [0, 1, 0], [1, 0, 1]])
    np.testing.assert_array_equal(out, naive_matmul(H, H.T))
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(H)).data, H)
    assert T.matmul(Tensor([[2.0]]), Tensor([[3.0]])).data[0, 0] == 6.0


def test_matmul_errors_and_batched_grad():
    with pytest.raises(DimensionError, match="inner"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    r = rng(9)
    assert grad_check(T.matmul, [r.uniform(-1, 1, (3, 4, 2)), r.uniform(-1, 1, (2, 5))]) <= 1e-6


# ----------------------------------------------------------------- elementwise

def test_elementwise_examples():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert T.concat_channels([Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 4, 4)))]).shape == (1, 5, 4, 4)
    z = Tensor(np.zeros(3), requires_grad=True)
    s = T.sqrt_eps(z)
    np.testing.assert_allclose(s.data, 1e-6, rtol=1e-12)
    T.sum_all(s).backward()
    assert np.all(np.isfinite(z.grad))


def test_relu_subgradient_zero_at_kink():
    x = Tensor(np.array([-1.0, 0.0, 1.0]), requires_grad=True)
    T.sum_all(T.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_shape_mismatch_errors():
    with pytest.raises(DimensionError, match="axis 1"):
        T.add(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))
    with pytest.raises(DimensionError):
        T.mul(Tensor(np.zeros((2,))), Tensor(np.zeros((2, 1))))
    with pytest.raises(DimensionError, match="axis 2"):
        T.concat_channels([Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 5, 4)))])


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError, match="sqrt_eps"):
        T.sqrt_eps(Tensor([-1.0]))


def _relu_input(seed):
    x = rng(seed).uniform(0.01, 1.0, (2, 3, 3, 3))
    return x * rng(seed + 1).choice([-1.0, 1.0], x.shape)


def test_gradcheck_relu_linear_and_misc():
    assert grad_check(T.relu, [_relu_input(10)]) <= 1e-8
    # dyadic inputs and step keep every difference exact
    c, x = 3.0, rng(11).integers(-8, 9, (2, 2)) / 8.0
    leaf = Tensor(x, requires_grad=True)
    T.sum_all(T.scale(leaf, c)).backward()
    np.testing.assert_array_equal(leaf.grad, np.full((2, 2), c))
    assert grad_check(lambda a: T.scale(a, c), [x], h=2.0 ** -20) <= 1e-12
    r = rng(12)
    a, b = r.uniform(-1, 1, (1, 2, 3, 3)), r.uniform(-1, 1, (1, 2, 3, 3))
    assert grad_check(lambda x, y: T.mul(T.add(x, y), x), [a, b]) <= 1e-6
    assert grad_check(lambda x: T.abs_(x), [_relu_input(13)]) <= 1e-6
    assert grad_check(lambda x: T.mean(T.square(x)), [a]) <= 1e-6
    assert grad_check(lambda x: T.sqrt_eps(T.square(x)), [_relu_input(14)]) <= 1e-6
    assert grad_check(lambda x, y: T.concat_channels([x, T.scale(y, 2.0)]), [a, b]) <= 1e-6
    assert grad_check(lambda x: T.mul(T.channel_slice(x, 1, 2), T.channel_slice(x, 0, 1)), [a]) <= 1e-6


def test_gradcheck_structural_ops():
    r = rng(15)
    x = r.uniform(-1, 1, (1, 2, 3, 5))
    w = Tensor(r.uniform(-1, 1, (1, 2, 5, 6)))
    assert grad_check(lambda a: T.mul(T.pad_symmetric(a, 2, 1), w), [x]) <= 1e-6
    assert grad_check(lambda a: T.square(T.crop(a, 2, 4)), [x]) <= 1e-6
    assert grad_check(lambda a: T.square(T.transpose(a, (0, 3, 1, 2))), [x]) <= 1e-6


def test_gradcheck_reports_non_finite_by_name():
    with pytest.raises(NonFiniteError, match="bad_op"):
        grad_check(lambda x: T.sqrt_eps(T.scale(x, -1.0)), [np.ones(2)], name="bad_op")


def test_forward_is_deterministic():
    r = rng(16)
    x, w = r.uniform(-1, 1, (2, 4, 9, 9)), r.uniform(-1, 1, (4, 4, 3, 3))
    a = T.conv2d(Tensor(x), Tensor(w), padding=1).data
    b = T.conv2d(Tensor(x), Tensor(w), padding=1).data
    assert a.tobytes() == b.tobytes()


def test_backward_accumulates_over_shared_inputs():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = T.add(T.mul(x, x), x)
    y.backward()
    np.testing.assert_array_equal(x.grad, [7.0])
