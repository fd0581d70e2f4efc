import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octcodec import tensor as T
from octcodec.optim import Adam, AdamState, adam_step
from octcodec.tensor import Tensor, no_grad

from helpers import gradcheck


def naive_conv(x, w, b, stride, pad):
    """Quadruple-loop cross-correlation, the direct-summation oracle."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for b_ in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b_, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[b_, o, i, j] = (patch * w[o]).sum() + (0 if b is None else b[o])
    return out


def test_conv_scalar_kernel():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = T.conv2d(x, Tensor(np.array([[[[2.0]]]])))
    np.testing.assert_array_equal(out.data[0, 0], [[2, 4], [6, 8]])


def test_conv_window_sum():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = T.conv2d(x, Tensor(np.ones((1, 1, 2, 2))), stride=2)
    np.testing.assert_array_equal(out.data, [[[[10.0]]]])


def test_conv_matches_direct_summation():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b.reshape(1, 4, 1, 1)), 1, 1)
    np.testing.assert_allclose(out.data, naive_conv(x, w, b, 1, 1), atol=1e-12, rtol=0)


@pytest.mark.parametrize("stride,pad", [(2, 1), (2, 0), (3, 2)])
def test_conv_strided_matches_direct_summation(stride, pad):
    rng = np.random.default_rng(stride + pad)
    x = rng.normal(size=(2, 2, 9, 7))
    w = rng.normal(size=(3, 2, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), None, stride, pad)
    assert out.shape[2:] == ((9 + 2 * pad - 3) // stride + 1, (7 + 2 * pad - 3) // stride + 1)
    np.testing.assert_allclose(out.data, naive_conv(x, w, None, stride, pad), atol=1e-12, rtol=0)


def test_conv_rejects_bad_shapes():
    with pytest.raises(ValueError, match="channel"):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError, match="stride"):
        T.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=0)


def test_transposed_conv_stamps_kernel():
    out = T.conv2d_transpose(Tensor(np.array([[[[5.0]]]])), Tensor(np.ones((1, 1, 2, 2))), None, 2, 0)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 5.0))


def test_transposed_conv_zero_kernel():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 3, 3)))
    out = T.conv2d_transpose(x, Tensor(np.zeros((2, 4, 3, 3))), None, 2, 1, 1)
    assert out.shape == (1, 4, 6, 6)
    assert not out.data.any()


def test_transposed_conv_output_size():
    x = Tensor(np.ones((1, 1, 5, 4)))
    out = T.conv2d_transpose(x, Tensor(np.ones((1, 2, 3, 3))), None, 2, 1)
    assert out.shape == (1, 2, (5 - 1) * 2 - 2 + 3, (4 - 1) * 2 - 2 + 3)


@settings(max_examples=40, deadline=None)
@given(
    stride=st.integers(1, 3),
    pad=st.integers(0, 2),
    k=st.sampled_from([1, 2, 3, 5]),
    h=st.integers(5, 9),
    w=st.integers(5, 9),
    seed=st.integers(0, 10_000),
)
def test_adjoint_identity(stride, pad, k, h, w, seed):
    """<conv(x), y> == <x, conv_T(y)> for the same kernel, stride and padding."""
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, h, w))
    kern = rng.normal(size=(4, 3, k, k))
    y_shape = T.conv2d(Tensor(x), Tensor(kern), None, stride, pad).shape
    y = rng.normal(size=y_shape)
    # output padding restores the rows the forward stride dropped
    op_h = (h + 2 * pad - k) % stride
    op_w = (w + 2 * pad - k) % stride
    if op_h != op_w:
        return
    lhs = float((T.conv2d(Tensor(x), Tensor(kern), None, stride, pad).data * y).sum())
    xt = T.conv2d_transpose(Tensor(y), Tensor(kern), None, stride, pad, op_h)
    assert xt.shape == x.shape
    rhs = float((x * xt.data).sum())
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_backward_sum_of_scaled():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    T.tsum(T.mul(x, 2.0)).backward()
    np.testing.assert_array_equal(x.grad, np.full((2, 3), 2.0))


def test_backward_square():
    x = Tensor(np.array([3.0]), requires_grad=True)
    T.tsum(T.mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [6.0])


def test_backward_accumulates_over_reuse():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = T.add(T.mul(x, 3.0), T.exp(x))
    T.tsum(T.add(y, x)).backward()
    np.testing.assert_allclose(x.grad, 4.0 + np.exp([1.5, -2.0]))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        T.mul(x, 2.0).backward()


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad


def test_forward_ops_are_deterministic():
    rng = np.random.default_rng(3)
    x, w = rng.normal(size=(1, 3, 8, 8)), rng.normal(size=(3, 4, 3, 3))
    a = T.conv2d_transpose(Tensor(x), Tensor(w), None, 2, 1, 1).data
    b = T.conv2d_transpose(Tensor(x), Tensor(w), None, 2, 1, 1).data
    assert a.tobytes() == b.tobytes()


OPS = {
    "exp": (T.exp, [(2, 3)]),
    "log": (lambda a: T.log(T.add(T.mul(a, a), 1.0)), [(2, 3)]),
    "log2": (lambda a: T.log2(T.add(T.mul(a, a), 0.5)), [(3,)]),
    "tanh": (T.tanh, [(2, 3)]),
    "sigmoid": (T.sigmoid, [(2, 3)]),
    "softplus": (T.softplus, [(2, 3)]),
    "normal_cdf": (T.normal_cdf, [(2, 3)]),
    "div": (lambda a, b: T.div(a, T.add(T.mul(b, b), 1.0)), [(2, 3), (2, 3)]),
    "sqrt": (lambda a: T.sqrt(T.add(T.mul(a, a), 1.0)), [(4,)]),
    "power": (lambda a: T.power(T.add(T.mul(a, a), 1.0), 1.5), [(4,)]),
    "broadcast_mul": (T.mul, [(2, 3, 4), (1, 3, 1)]),
    "mean": (lambda a: T.mean(a, axis=1, keepdims=True), [(2, 3, 4)]),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [(1, 2, 3), (1, 1, 3)]),
    "channel_slice": (lambda a: T.channel_slice(a, 1, 3), [(1, 4, 2, 2)]),
    "crop": (lambda a: T.crop(a, 2, 3), [(1, 1, 4, 4)]),
    "matmul": (T.matmul, [(2, 3, 4), (2, 4, 2)]),
    "transpose": (lambda a: T.transpose(a, (1, 0, 2)), [(2, 3, 4)]),
    "conv2d": (lambda x, w, b: T.conv2d(x, w, b, 1, 1), [(1, 2, 5, 5), (3, 2, 3, 3), (1, 3, 1, 1)]),
    "conv2d_stride2": (lambda x, w: T.conv2d(x, w, None, 2, 1), [(2, 2, 6, 6), (2, 2, 3, 3)]),
    "conv2d_transpose": (
        lambda x, w, b: T.conv2d_transpose(x, w, b, 2, 1, 1),
        [(1, 2, 3, 3), (2, 3, 3, 3), (1, 3, 1, 1)],
    ),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    op, shapes = OPS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    arrays = [rng.normal(size=s) for s in shapes]
    assert gradcheck(op, arrays) < 1e-5


def test_kinked_op_gradients_away_from_kinks():
    rng = np.random.default_rng(5)
    x = rng.uniform(0.2, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
    assert gradcheck(T.abs_, [x]) < 1e-5
    assert gradcheck(lambda a: T.leaky_relu(a, 0.2), [x]) < 1e-5
    assert gradcheck(lambda a: T.clamp(a, -1.0, 1.0), [np.where(np.abs(x) > 1, x * 1.5, x * 0.8)]) < 1e-5


def test_lower_bound_passes_gradient_only_when_useful():
    x = Tensor(np.array([0.5, 2.0]), requires_grad=True)
    T.tsum(T.mul(T.lower_bound(x, 1.0), 1.0)).backward()
    # below the bound a positive upstream gradient is blocked
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])
    x = Tensor(np.array([0.5]), requires_grad=True)
    T.tsum(T.mul(T.lower_bound(x, 1.0), -1.0)).backward()
    np.testing.assert_array_equal(x.grad, [-1.0])


def test_round_half_away_from_zero():
    np.testing.assert_array_equal(T.round_half_away(np.array([0.4, -1.5, 1.5, 2.5, -0.5, 0.5])), [0, -2, 2, 3, -1, 1])


# -- Adam -----------------------------------------------------------------------
def test_adam_first_step_closed_form():
    state = AdamState(lr=1e-3)
    (p,), state = adam_step([np.array([1.0])], [np.array([1.0])], state)
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    expected = 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8)
    assert abs(p[0] - expected) < 1e-12
    assert abs(p[0] - 0.999) < 1e-6
    assert state.step == 1


def test_adam_zero_grad_keeps_param():
    (p,), _ = adam_step([np.array([0.7])], [np.array([0.0])], AdamState(lr=1e-3))
    assert p[0] == 0.7


def test_adam_deterministic():
    params = [np.array([0.3, -1.0])]
    grads = [np.array([0.2, 0.5])]
    a, sa = adam_step(params, grads, AdamState(lr=1e-2))
    b, sb = adam_step(params, grads, AdamState(lr=1e-2))
    assert a[0].tobytes() == b[0].tobytes()
    assert sa.step == sb.step


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        adam_step([np.array([1.0])], [np.array([np.nan])], AdamState())


def test_adam_optimizer_minimizes_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        T.tsum(T.mul(x, x)).backward()
        opt.step()
    assert np.abs(x.data).max() < 1e-2
