import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labsched.errors import ConfigError, DataError, DimensionError, NumericError, StateError
from labsched.numkernel import (LSTM, Adam, AdamState, Affine, ParamTensor, adam_update,
                                expectile_loss, load_params, lstm_cell_step, mse, save_params,
                                softmax, softmax_cross_entropy)
from labsched.numkernel.checkpoint import dumps_params, loads_params

from oracles import central_diff, expectile_bisection, lstm_reference, naive_matmul, rel_error


def affine_with(W, b):
    layer = Affine(W.shape[0], W.shape[1])
    layer.W.value[...] = W
    layer.b.value[...] = b
    return layer


# affine ------------------------------------------------------------------

def test_affine_identity():
    layer = affine_with(np.eye(2), np.zeros((1, 2)))
    np.testing.assert_array_equal(layer.forward(np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_affine_zero_input_passes_bias():
    rng = np.random.default_rng(0)
    layer = affine_with(rng.normal(size=(2, 2)), np.array([[3.0, -1.0]]))
    np.testing.assert_array_equal(layer.forward(np.zeros((1, 2))), [[3.0, -1.0]])


def test_affine_matches_naive_matmul():
    rng = np.random.default_rng(1)
    x, W, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=(1, 2))
    expected = naive_matmul(x.tolist(), W.tolist()) + b
    np.testing.assert_allclose(affine_with(W, b).forward(x), expected, rtol=1e-14, atol=1e-14)


def test_affine_shape_error_names_both_shapes():
    layer = Affine(3, 2)
    with pytest.raises(DimensionError, match=r"\(1, 4\).*\(3, 2\)"):
        layer.forward(np.zeros((1, 4)))


def test_affine_backward_requires_forward():
    with pytest.raises(StateError):
        Affine(2, 2).backward(np.zeros((1, 2)))


def test_affine_backward_zero_grad():
    rng = np.random.default_rng(2)
    layer = Affine(3, 2, rng)
    layer.forward(rng.normal(size=(5, 3)))
    dx = layer.backward(np.zeros((5, 2)))
    assert not dx.any() and not layer.W.grad.any() and not layer.b.grad.any()


def test_affine_backward_scalar_chain_rule():
    layer = affine_with(np.array([[1.7]]), np.array([[0.3]]))
    layer.forward(np.array([[2.0]]))
    dx = layer.backward(np.array([[0.5]]))
    assert dx[0, 0] == pytest.approx(0.5 * 1.7)
    assert layer.W.grad[0, 0] == pytest.approx(2.0 * 0.5)
    assert layer.b.grad[0, 0] == pytest.approx(0.5)


def test_affine_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    layer = Affine(3, 4, rng)
    layer.b.value[...] = rng.normal(size=(1, 4))
    x = rng.normal(size=(5, 3))
    R = rng.normal(size=(5, 4))

    def loss():
        return float(np.sum(layer.forward(x) * R))

    layer.zero_grad()
    layer.forward(x)
    dx = layer.backward(R)
    assert rel_error(dx, central_diff(loss, x)) < 1e-4
    assert rel_error(layer.W.grad, central_diff(loss, layer.W.value)) < 1e-4
    assert rel_error(layer.b.grad, central_diff(loss, layer.b.value)) < 1e-4


# LSTM --------------------------------------------------------------------

def test_lstm_zero_weights_give_zero_state():
    lstm = LSTM(3, 4)
    h, c = lstm.step(np.ones((1, 3)), np.zeros((1, 4)), np.zeros((1, 4)))
    assert not h.any() and not c.any()


def test_lstm_saturated_forget_gate_keeps_cell():
    lstm = LSTM(3, 4)
    lstm.b.value[0, 4:8] = 50.0
    c_prev = np.array([[0.3, -1.2, 2.0, 0.7]])
    _, c = lstm.step(np.ones((1, 3)), np.zeros((1, 4)), c_prev)
    np.testing.assert_allclose(c, c_prev, atol=1e-9)


def test_lstm_cell_step_vector_interface_matches_scalar_reference():
    rng = np.random.default_rng(4)
    lstm = LSTM(3, 4, rng)
    lstm.b.value[...] = rng.normal(size=lstm.b.shape)
    x, h0, c0 = rng.normal(size=3), rng.normal(size=4), rng.normal(size=4)
    h, c = lstm_cell_step(x, h0, c0, lstm)
    hs, cs = lstm_reference(x[None], lstm.Wx.value, lstm.Wh.value, lstm.b.value, h0, c0)
    np.testing.assert_allclose(h, hs[0], rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(c, cs[0], rtol=1e-12, atol=1e-14)


def test_lstm_forward_matches_scalar_reference():
    rng = np.random.default_rng(5)
    lstm = LSTM(3, 4, rng)
    X = rng.normal(size=(2, 5, 3))
    hs = lstm.forward(X)
    for b in range(2):
        ref, _ = lstm_reference(X[b], lstm.Wx.value, lstm.Wh.value, lstm.b.value)
        np.testing.assert_allclose(hs[b], ref, rtol=1e-12, atol=1e-14)


def test_lstm_nan_names_gate():
    lstm = LSTM(2, 3)
    lstm.b.value[0, 3] = np.nan  # first unit of the forget block
    with pytest.raises(NumericError, match="forget"):
        lstm.step(np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 3)))


def test_lstm_bptt_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    lstm = LSTM(3, 4, rng)
    lstm.b.value[...] = rng.normal(scale=0.5, size=lstm.b.shape)
    X = rng.normal(size=(2, 3, 3))
    R = rng.normal(size=(2, 3, 4))

    def loss():
        return float(np.sum(lstm.forward(X) * R))

    lstm.zero_grad()
    lstm.forward(X)
    dX = lstm.backward(R)
    assert rel_error(dX, central_diff(loss, X)) < 1e-4
    for _, p in lstm.named_parameters():
        assert rel_error(p.grad, central_diff(loss, p.value)) < 1e-4


def test_lstm_backward_requires_forward():
    with pytest.raises(StateError):
        LSTM(2, 2).backward(np.zeros((1, 1, 2)))


# Adam --------------------------------------------------------------------

def test_adam_zero_grad_is_noop():
    p = ParamTensor(np.array([[1.0, -2.0]]))
    st_ = AdamState.for_param(p)
    adam_update(p, st_)
    np.testing.assert_array_equal(p.value, [[1.0, -2.0]])


def test_adam_first_step_moves_by_lr():
    p = ParamTensor(np.array([[0.5]]))
    state = AdamState.for_param(p, lr=0.01)
    p.grad[...] = 1.0
    adam_update(p, state)
    assert p.value[0, 0] == pytest.approx(0.5 - 0.01, abs=1e-8)
    assert not p.grad.any()
    assert state.step == 1


def test_adam_quadratic_converges():
    p = ParamTensor(np.array([[0.0]]))
    state = AdamState.for_param(p, lr=0.1)
    for _ in range(100):
        p.grad[...] = 2 * (p.value - 3.0)
        adam_update(p, state)
    assert abs(p.value[0, 0] - 3.0) < 0.1


def test_adam_nonfinite_grad_raises():
    p = ParamTensor(np.array([[0.0]]))
    p.grad[...] = np.inf
    with pytest.raises(NumericError):
        adam_update(p, AdamState.for_param(p))


def test_adam_clips_global_norm():
    p = ParamTensor(np.zeros((1, 2)))
    opt = Adam([p], lr=0.1, clip_norm=5.0)
    p.grad[...] = [[30.0, 40.0]]
    assert opt.step() == pytest.approx(50.0)


# losses ------------------------------------------------------------------

@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_expectile_half_is_half_mse(u):
    loss, _ = expectile_loss(np.array([u]), 0.5)
    assert loss == pytest.approx(0.5 * u * u, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
def test_expectile_tau_out_of_range(tau):
    with pytest.raises(ConfigError):
        expectile_loss(np.zeros(3), tau)


def test_cross_entropy_uniform_logits_is_log_k():
    loss, _ = softmax_cross_entropy(np.zeros((1, 40)), [7])
    assert loss == pytest.approx(math.log(40), rel=1e-14)


def test_expectile_regression_matches_bisection_oracle():
    # 0.9-expectile of {1, 2, 10}: 0.9 (10 - e) = 0.1 ((e - 1) + (e - 2)) -> e = 93/11
    sample = np.array([1.0, 2.0, 10.0])
    assert expectile_bisection(sample, 0.9) == pytest.approx(93 / 11, abs=1e-9)
    p = ParamTensor(np.array([[0.0]]))
    opt = Adam([p], lr=0.05, clip_norm=None)
    for k in range(4000):
        if k == 3000:
            opt.set_lr(0.005)
        _, du = expectile_loss(sample - p.value[0, 0], 0.9)
        p.grad[...] = -du.sum()
        opt.step()
    assert p.value[0, 0] == pytest.approx(93 / 11, abs=1e-3)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(4, 5))
    classes = np.array([0, 3, 4, 1])
    _, g = softmax_cross_entropy(logits, classes)
    assert rel_error(g, central_diff(lambda: softmax_cross_entropy(logits, classes)[0],
                                     logits)) < 1e-6
    pred, target = rng.normal(size=(6,)), rng.normal(size=(6,))
    _, g = mse(pred, target)
    assert rel_error(g, central_diff(lambda: mse(pred, target)[0], pred)) < 1e-6
    u = rng.normal(size=(6,))
    _, g = expectile_loss(u, 0.8)
    assert rel_error(g, central_diff(lambda: expectile_loss(u, 0.8)[0], u)) < 1e-6


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
def test_softmax_is_a_distribution(row):
    p = softmax(np.array([row]))
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) < 1e-12


# checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    params = {"a.W": rng.normal(size=(3, 4)), "b": np.array([[np.pi, -0.0, 1e-300]])}
    save_params(tmp_path / "x.ckpt", params)
    back = load_params(tmp_path / "x.ckpt")
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_checkpoint_layout():
    blob = dumps_params({"w": np.array([[1.0, 2.0]])})
    assert blob[0] == 1
    assert int.from_bytes(blob[1:5], "little") == 1
    assert int.from_bytes(blob[5:7], "little") == 1 and blob[7:8] == b"w"
    assert int.from_bytes(blob[8:12], "little") == 1
    assert int.from_bytes(blob[12:16], "little") == 2
    assert np.frombuffer(blob[16:], "<f8").tolist() == [1.0, 2.0]


def test_checkpoint_rejects_bad_version_and_truncation():
    blob = dumps_params({"w": np.ones((2, 2))})
    with pytest.raises(DataError):
        loads_params(b"\x02" + blob[1:])
    with pytest.raises(DataError):
        loads_params(blob[:-3])


def test_module_state_dict_round_trip():
    rng = np.random.default_rng(9)
    a, b = LSTM(3, 2, rng), LSTM(3, 2)
    b.load_state_dict(a.state_dict())
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(p.value, q.value)
