import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iaunet.core import (AdamW, BatchNorm2d, ContractError, NumericError, Parameter, ShapeError, Tensor,
                         adamw_step, cosine_lr, load_checkpoint, save_checkpoint)
from iaunet.core import functional as F
from iaunet.core.checkpoint import CheckpointError
from iaunet.core.optim import AdamState

from _oracles import check_op_gradients, elementwise_rel_error, fd_gradient


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# --------------------------------------------------------------------------- conv2d

def test_conv2d_all_ones_center():
    out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
    assert out.shape == (1, 1, 3, 3)
    assert out.data[0, 0, 1, 1] == 9.0


def test_conv2d_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 6))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(F.conv2d(Tensor(x), Tensor(k), padding=1).data, x)


def test_conv2d_matches_direct_loop(rng):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 4, 3))
    for n in range(2):
        for k in range(4):
            for i in range(4):
                for j in range(3):
                    ref[n, k, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[k]).sum() + b[k]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
def test_conv2d_gradient(rng, stride, padding):
    x, w, b = leaf(rng, 1, 2, 5, 5), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)
    err = check_op_gradients(lambda x, w, b: F.conv2d(x, w, b, stride=stride, padding=padding), [x, w, b])
    assert err < 1e-5


def test_conv2d_shape_errors():
    with pytest.raises(ShapeError, match="axis 1"):
        F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="odd"):
        F.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


# --------------------------------------------------------------------------- depthwise

def test_depthwise_identity_and_channel_isolation(rng):
    x = rng.standard_normal((2, 2, 4, 5))
    k = np.zeros((2, 1, 3, 3))
    k[:, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(F.depthwise_conv2d(Tensor(x), Tensor(k), padding=1).data, x)
    k[0] = 0.0
    out = F.depthwise_conv2d(Tensor(x), Tensor(k), padding=1).data
    assert np.all(out[:, 0] == 0)
    np.testing.assert_array_equal(out[:, 1], x[:, 1])


@pytest.mark.parametrize("stride", [1, 2])
def test_depthwise_gradient(rng, stride):
    x, w = leaf(rng, 2, 3, 6, 5), leaf(rng, 3, 1, 3, 3)
    assert check_op_gradients(lambda x, w: F.depthwise_conv2d(x, w, stride=stride, padding=1), [x, w]) < 1e-5


def test_depthwise_rejects_bad_weight():
    with pytest.raises(ShapeError, match="axis 0"):
        F.depthwise_conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 1, 3, 3))))


# --------------------------------------------------------------------------- linear

def test_linear_identity_and_ones():
    x = Tensor([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(F.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    np.testing.assert_array_equal(F.linear(x, Tensor(np.ones((2, 3))), Tensor(np.zeros(2))).data, [[6.0, 6.0]])


def test_linear_gradient(rng):
    x, w, b = leaf(rng, 2, 3, 4), leaf(rng, 5, 4), leaf(rng, 5)
    assert check_op_gradients(F.linear, [x, w, b]) < 1e-5


def test_linear_trailing_mismatch():
    with pytest.raises(ShapeError, match="trailing"):
        F.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


# --------------------------------------------------------------------------- softmax

def test_softmax_uniform_and_overflow():
    np.testing.assert_allclose(F.softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)
    out = F.softmax_lastdim(Tensor([1000.0, 0.0])).data
    # exact value: 1 / (1 + e^-1000); e^-1000 underflows below double precision
    assert out[0] == 1.0 and 0.0 <= out[1] < 1e-300
    assert np.all(np.isfinite(out))


def test_softmax_nan_raises():
    with pytest.raises(NumericError):
        F.softmax_lastdim(Tensor([0.0, np.nan]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    out = F.softmax_lastdim(Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-9)
    shifted = F.softmax_lastdim(Tensor(x + c)).data
    np.testing.assert_allclose(shifted, out, rtol=0, atol=1e-12)


def test_softmax_and_log_softmax_gradients(rng):
    x = leaf(rng, 3, 5)
    assert check_op_gradients(F.softmax_lastdim, [x]) < 1e-5
    assert check_op_gradients(F.log_softmax_lastdim, [x]) < 1e-5


# --------------------------------------------------------------------------- bilinear

def test_bilinear_constant_and_ramp():
    const = F.bilinear_upsample2x(Tensor(np.full((1, 2, 3, 4), 2.5))).data
    np.testing.assert_allclose(const, 2.5, rtol=0, atol=1e-15)
    assert np.isclose(const.sum(), 4 * 2.5 * 24)
    ramp = F.bilinear_upsample2x(Tensor(np.array([[[[0.0, 1.0]]]]))).data
    np.testing.assert_allclose(ramp[0, 0, 0], [0.0, 0.25, 0.75, 1.0], rtol=0, atol=1e-15)
    assert ramp.shape == (1, 1, 2, 4)


def test_bilinear_gradient(rng):
    assert check_op_gradients(F.bilinear_upsample2x, [leaf(rng, 2, 2, 3, 4)]) < 1e-5


# --------------------------------------------------------------------------- batchnorm

def test_batchnorm_train_statistics(rng):
    x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 3 + 2)
    out = F.batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    # eps=1e-5 shrinks the variance by var/(var+eps); with var ~ 9 that is ~1e-6
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=2e-6)


def test_batchnorm_zero_gamma_gives_beta(rng):
    beta = np.array([0.5, -1.0])
    out = F.batchnorm2d(Tensor(rng.standard_normal((2, 2, 3, 3))), Tensor(np.zeros(2)), Tensor(beta),
                        np.zeros(2), np.ones(2), training=True).data
    np.testing.assert_array_equal(out, np.broadcast_to(beta[None, :, None, None], out.shape))


def test_batchnorm_running_stats_and_eval(rng):
    bn = BatchNorm2d(2)
    x = Tensor(rng.standard_normal((3, 2, 4, 4)) + 5.0)
    bn(x)
    m = 3 * 16
    np.testing.assert_allclose(bn._buffers["running_mean"], 0.1 * x.data.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(bn._buffers["running_var"], 0.9 + 0.1 * x.data.var(axis=(0, 2, 3)) * m / (m - 1))
    bn.eval()
    before = bn._buffers["running_mean"].copy()
    out = bn(x).data
    np.testing.assert_array_equal(bn._buffers["running_mean"], before)
    ref = (x.data - before[None, :, None, None]) / np.sqrt(bn._buffers["running_var"][None, :, None, None] + 1e-5)
    np.testing.assert_allclose(out, ref, rtol=1e-12)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradient(rng, training):
    x, g, b = leaf(rng, 3, 2, 3, 3), leaf(rng, 2), leaf(rng, 2)
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2, 2)

    def op(x, g, b):
        return F.batchnorm2d(x, g, b, rm.copy(), rv.copy(), training=training)

    assert check_op_gradients(op, [x, g, b]) < 1e-4


def test_layer_norm_gradient(rng):
    x, g, b = leaf(rng, 2, 3, 6), leaf(rng, 6), leaf(rng, 6)
    assert check_op_gradients(F.layer_norm, [x, g, b]) < 1e-5


# --------------------------------------------------------------------------- misc primitives

@pytest.mark.parametrize("op,shapes", [
    (lambda a, b: a * b + a / (b * b + 1.0) - b, [(3, 4), (1, 4)]),
    (lambda a, b: F.matmul(a, b), [(2, 3, 4), (4, 5)]),
    (lambda a: F.sigmoid(a) + F.softplus(a) + F.exp(0.3 * a), [(3, 3)]),
    (lambda a: F.relu(a) * 2.0, [(4, 4)]),
    (lambda a: F.log(a * a + 1.0) ** 1.5, [(3,)]),
    (lambda a, b: F.concat([a, b], axis=1), [(2, 2), (2, 3)]),
    (lambda a: F.take(a, [2, 0, 2], axis=0), [(3, 4)]),
    (lambda a: F.transpose(a, (1, 2, 0)).reshape(4, 6), [(2, 3, 4)]),
    (lambda a: F.broadcast_to(a, (3, 2, 4)), [(2, 1)]),
    (lambda a: a.mean(axis=(0, 2), keepdims=True) + a.sum(axis=1).sum(), [(2, 3, 4)]),
])
def test_primitive_gradients(rng, op, shapes):
    inputs = [leaf(rng, *s) for s in shapes]
    assert check_op_gradients(op, inputs) < 1e-5


# --------------------------------------------------------------------------- backward semantics

def test_backward_sum_and_square():
    x = Tensor(np.arange(4.0), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones(4))
    y = Tensor([1.0, 2.0], requires_grad=True)
    (y * y).sum().backward()
    np.testing.assert_array_equal(y.grad, [2.0, 4.0])


def test_backward_accumulates_until_zeroed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_shared_subexpression_counts_each_path_once():
    # f = (x*y) * (x*y) + x*y with shared u = x*y; df/dx = 2*u*y + y
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(3.0, requires_grad=True)
    u = x * y
    (u * u + u).backward()
    assert x.grad == 2 * 6 * 3 + 3
    assert y.grad == 2 * 6 * 2 + 2


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_deep_graph_no_recursion_limit():
    x = Tensor(1.0, requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.backward()
    assert x.grad == 1.0


# --------------------------------------------------------------------------- optimizer

def test_adamw_zero_grad_no_decay_is_noop():
    p = np.array([1.0, -2.0])
    adamw_step([p], [np.zeros(2)], AdamState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adamw_first_step_closed_form():
    # m_hat = g, v_hat = g^2 after bias correction -> p -= lr * g / (|g| + eps)
    p = np.array([1.0])
    state = AdamState()
    adamw_step([p], [np.array([1.0])], state, lr=0.1, weight_decay=0.0)
    assert p[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_adamw_decoupled_decay():
    param = Parameter([2.0])
    opt = AdamW([param], lr=0.1, weight_decay=0.05)
    param.grad = np.zeros(1)
    opt.step()
    assert param.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.05), abs=1e-15)


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 1e-3) == pytest.approx(1e-3)
    assert cosine_lr(100, 100, 1e-3) == pytest.approx(1e-6)
    assert cosine_lr(50, 100, 1e-3) == pytest.approx(1e-6 + 0.5 * (1e-3 - 1e-6))


# --------------------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip_and_layout(tmp_path, rng):
    arrays = {"a.weight": rng.standard_normal((2, 3)), "bé": np.array(4.0), "c": rng.standard_normal(5)}
    path = tmp_path / "m.ck"
    save_checkpoint(path, arrays)
    blob = path.read_bytes()
    assert blob[:8] == b"IAUNETCK"
    assert int.from_bytes(blob[8:12], "little") == 1
    assert int.from_bytes(blob[12:16], "little") == 3
    back = load_checkpoint(path)
    assert list(back) == list(arrays)
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    path.write_bytes(blob[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


# --------------------------------------------------------------------------- finiteness property

@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (1, 2, 4, 4), elements=st.floats(-1e3, 1e3)))
def test_forward_values_finite(x):
    t = Tensor(x)
    w = Tensor(np.full((2, 2, 3, 3), 0.1))
    outs = [F.conv2d(t, w, padding=1), F.bilinear_upsample2x(t), F.sigmoid(t), F.softplus(t),
            F.batchnorm2d(t, Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True),
            F.softmax_lastdim(t), F.log_softmax_lastdim(t)]
    assert all(np.all(np.isfinite(o.data)) for o in outs)


def test_fd_oracle_sanity():
    # the oracle itself, on a function with a known derivative
    a = np.array([0.3, -1.2])
    g = fd_gradient(lambda: float(np.sin(a).sum()), [a])[0]
    assert elementwise_rel_error(np.cos(a), g) < 1e-7
