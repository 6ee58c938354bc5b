import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labsched.agents import DuelingQNet
from labsched.errors import DimensionError, TrainingError
from labsched.policyeval import (EvalContext, PhiData, PhiEstimator, PhiHParams, PolicyReport,
                                 QPolicy, always_stop, direct_gain, discount_weights,
                                 eval_context, evaluate_policy, gain_from_bits, oppe,
                                 phi_dataset, physician_policy, policy_cost, r_squared,
                                 random_policy, read_reports, run_policy, run_policy_batch,
                                 train_phi, write_per_stay, write_reports)
from labsched.trajectory import build_inputs, predict


def bias_net(values, h_dim=2):
    """Q depends only on the advantage bias, so Q(s, .) = values - mean + const."""
    K = len(values) - 1
    net = DuelingQNet(h_dim + K, K + 1, 2)
    net.adv.b.value[...] = values
    return net


def traced_net():
    # hidden units: z0 = 1, z_{1..3} = bits; advantages read from them
    net = DuelingQNet(1 + 3, 4, 4)
    net.trunk.b.value[...] = [[1.0, 0.0, 0.0, 0.0]]
    net.trunk.W.value[1:, 1:] = np.eye(3)
    net.adv.W.value[...] = [[2.0, 3.0, 1.0, 0.5],
                            [0.0, 0.0, 0.0, 0.0],
                            [-2.5, 0.0, 0.0, 0.0],
                            [0.0, 0.0, 0.0, 2.0]]
    return net


def random_qnet(h_dim=3, K=4, seed=0):
    rng = np.random.default_rng(seed)
    net = DuelingQNet(h_dim + K, K + 1, 6, rng)
    for _, p in net.named_parameters():
        p.value[...] = rng.normal(size=p.shape)
    return net


# run_policy --------------------------------------------------------------

def test_stop_maximal_gives_empty_set():
    ordered, trace = run_policy(bias_net([0.1, 0.2, 0.3, 5.0]), np.zeros(2), return_trace=True)
    assert ordered == set() and trace == [3]


def test_descending_tests_above_stop_order_everything():
    ordered, trace = run_policy(bias_net([4.0, 3.0, 2.0, 1.0]), np.zeros(2), return_trace=True)
    assert ordered == {0, 1, 2} and trace == [0, 1, 2, 3]


def test_hand_traced_sequence():
    # Q at {}: (2, 3, 1, .5) -> 1; at {1}: (-.5, -, 1, .5) -> 2; at {1, 2}: (-.5, -, -, 2.5) -> stop
    ordered, trace = run_policy(traced_net(), np.zeros(1), return_trace=True)
    assert trace == [1, 2, 3] and ordered == {1, 2}
    np.testing.assert_array_equal(run_policy_batch(traced_net(), np.zeros((1, 1))), [[0, 1, 1]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_batch_matches_loop_and_is_well_formed(seed):
    net = random_qnet(seed=seed)
    H = np.random.default_rng(seed).normal(size=(6, 3))
    batch = run_policy_batch(net, H, chunk=4)
    for i in range(6):
        ordered, trace = run_policy(net, H[i], return_trace=True)
        assert len(trace) <= 5 and trace[-1] == 4 and 4 not in ordered
        assert len(set(trace)) == len(trace)
        assert set(np.flatnonzero(batch[i])) == ordered


def test_stop_dominant_at_empty_set_costs_nothing():
    net = bias_net([-1.0, -2.0, -0.5, 0.0])
    assert not run_policy_batch(net, np.random.default_rng(0).normal(size=(10, 2))).any()


def test_run_policy_dimension_error():
    with pytest.raises(DimensionError):
        run_policy(bias_net([0.0, 1.0]), np.zeros(5))


# contexts, policies and cost ---------------------------------------------

@pytest.fixture(scope="module")
def ctx(small_dataset, small_model):
    return eval_context(small_model, small_dataset["test"])


def test_context_probabilities_match_model(ctx, small_model, small_dataset):
    p_T = predict(small_model, build_inputs(small_dataset["test"]))
    np.testing.assert_allclose(ctx.p[:, -1], p_T, rtol=0, atol=1e-12)
    assert not ctx.H[:, 0].any()
    np.testing.assert_allclose(ctx.p[:, 0], 1 / (1 + np.exp(-small_model.head.b.value[0, 0])))


def test_policy_costs(ctx, small_dataset):
    assert policy_cost(always_stop(), ctx) == 0.0
    mask = small_dataset["test"].mask
    direct = np.mean([mask[i].sum() for i in range(len(mask))])
    assert policy_cost(physician_policy(), ctx) == pytest.approx(direct, rel=1e-15)
    assert policy_cost(random_policy(1.0), ctx) == ctx.K * ctx.T
    assert policy_cost(random_policy(0.0), ctx) == 0.0


def test_random_policy_reproducible_per_stay(ctx):
    a = random_policy(0.3, seed=4).action_bits(ctx)
    b = random_policy(0.3, seed=4).action_bits(ctx)
    np.testing.assert_array_equal(a, b)
    assert abs(a.mean() - 0.3) < 0.02


# OPPE --------------------------------------------------------------------

def const_phi(ctx, value, signed_target=True):
    phi = PhiEstimator(ctx.H.shape[2], ctx.K, 8, signed_target=signed_target)
    phi.target_mean = value
    return phi


def test_always_stop_with_zero_phi_is_zero(ctx):
    est = oppe(const_phi(ctx, 0.0), ctx, always_stop())
    assert est.G == 0.0 and not est.per_stay.any()


def test_outcome_sign_parity(ctx):
    est = oppe(const_phi(ctx, 0.01, signed_target=False), ctx, physician_policy(), gamma=1.0)
    expected = 0.01 * ctx.T * np.where(ctx.episodes.y == 1, 1.0, -1.0)
    np.testing.assert_allclose(est.per_stay, expected, rtol=1e-12)


def test_discounting_modes():
    np.testing.assert_array_equal(discount_weights(3, 0.5), [1.0, 0.5, 0.25])
    np.testing.assert_array_equal(discount_weights(3, 0.5, literal_gamma=True), [0.5] * 3)


def test_oppe_linear_in_phi(ctx):
    rng = np.random.default_rng(0)
    phi = PhiEstimator(ctx.H.shape[2], ctx.K, 16, rng)
    phi.target_mean, phi.target_std = 0.01, 0.03
    base = oppe(phi, ctx, physician_policy())
    assert oppe(phi.scaled(2.0), ctx, physician_policy()).G == 2.0 * base.G
    assert oppe(phi.scaled(0.25), ctx, physician_policy()).G == 0.25 * base.G
    alpha = float(rng.normal())
    assert oppe(phi.scaled(alpha), ctx, physician_policy()).G == pytest.approx(alpha * base.G,
                                                                             rel=1e-12)


def test_direct_gain_matches_loop(ctx):
    g = direct_gain(ctx, gamma=0.9)
    total = 0.0
    for i in range(ctx.N):
        s = 1.0 if ctx.episodes.y[i] == 1 else -1.0
        for t in range(ctx.T):
            total += 0.9 ** t * s * (ctx.p[i, t + 1] - ctx.p[i, t])
    assert g.G == pytest.approx(total, rel=1e-10, abs=1e-12)


def test_phi_dimension_mismatch(ctx):
    phi = PhiEstimator(ctx.H.shape[2] + 1, ctx.K)
    with pytest.raises(DimensionError):
        oppe(phi, ctx, always_stop())


def test_phi_checkpoint_round_trip(tmp_path, ctx):
    phi = PhiEstimator(ctx.H.shape[2], ctx.K, 8, np.random.default_rng(1), signed_target=False)
    phi.target_mean, phi.target_std, phi.scale = 0.2, 0.5, 3.0
    phi.save(tmp_path / "phi.ckpt")
    back = PhiEstimator.load(tmp_path / "phi.ckpt")
    Z = np.random.default_rng(2).normal(size=(5, phi.input_dim))
    assert back.predict(Z).tobytes() == phi.predict(Z).tobytes()
    assert back.signed_target is False


# phi training ------------------------------------------------------------

def test_constant_target_is_learned(ctx):
    data = phi_dataset(ctx)
    const = PhiData(data.H, data.bits, np.full(len(data), 0.037), data.stay_index)
    n = len(const) // 2
    tr = PhiData(const.H[:n], const.bits[:n], const.target[:n], const.stay_index[:n])
    va = PhiData(const.H[n:], const.bits[n:], const.target[n:], const.stay_index[n:])
    phi, hist = train_phi(tr, va, PhiHParams(epochs=5, width=16))
    assert min(hist.val_mse) < 1e-4
    assert np.mean((phi.predict(va.inputs()) - 0.037) ** 2) < 1e-4


def test_permuted_labels_give_zero_r_squared(small_dataset, small_model):
    data = phi_dataset(eval_context(small_model, small_dataset["train"]))
    rng = np.random.default_rng(3)
    perm = PhiData(data.H, data.bits, rng.permutation(data.target), data.stay_index)
    n = len(perm) * 2 // 3
    tr = PhiData(perm.H[:n], perm.bits[:n], perm.target[:n], perm.stay_index[:n])
    va = PhiData(perm.H[n:], perm.bits[n:], perm.target[n:], perm.stay_index[n:])
    phi, _ = train_phi(tr, va, PhiHParams(epochs=5, width=16, batch_size=512))
    # a no-signal fit sits slightly below zero by roughly (params / pairs) after early stopping
    assert abs(r_squared(phi.predict(va.inputs()), va.target)) < 0.05


def test_empty_phi_set_raises(ctx):
    data = phi_dataset(ctx)
    empty = PhiData(data.H[:0], data.bits[:0], data.target[:0], data.stay_index[:0])
    with pytest.raises(TrainingError):
        train_phi(empty, data)


def test_r_squared_of_mean_predictor_is_zero():
    y = np.array([1.0, 2.0, 4.0])
    assert r_squared(np.full(3, y.mean()), y) == pytest.approx(0.0, abs=1e-15)
    assert r_squared(y, y) == 1.0


# reports -----------------------------------------------------------------

def test_evaluate_is_reproducible_and_round_trips(tmp_path, ctx):
    qnet = random_qnet(h_dim=ctx.H.shape[2], K=ctx.K, seed=5)
    phi = PhiEstimator(ctx.H.shape[2], ctx.K, 8, np.random.default_rng(6))
    a = evaluate_policy(QPolicy(qnet), phi, ctx, 0.99, "p1", "ddqn", 1e-3, 0.1, 2)
    b = evaluate_policy(QPolicy(qnet), phi, ctx, 0.99, "p1", "ddqn", 1e-3, 0.1, 2)
    assert (a.C, a.G, a.G_literal_gamma) == (b.C, b.G, b.G_literal_gamma)
    assert a.C >= 0 and np.isfinite(a.G)
    assert a.C == pytest.approx(a.per_stay_cost.mean()) and a.G == pytest.approx(a.per_stay_gain.sum())
    write_reports(tmp_path / "r.csv", [a])
    back = read_reports(tmp_path / "r.csv")[0]
    assert back.row() == a.row()
    write_per_stay(tmp_path / "s.csv", ctx.episodes.stay_ids, a)
    assert len((tmp_path / "s.csv").read_text().splitlines()) == ctx.N + 1
