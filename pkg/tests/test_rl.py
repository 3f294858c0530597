import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from explore_stop.errors import CheckpointError, InvalidConfigError, NonFiniteLossError
from explore_stop.model_sim import MarketConfig, TimeGrid
from explore_stop.rl import (Adam, LearningCurve, NetLayout, Problem, TrainConfig, ValueNet,
                             backward, default_layouts, evaluate_net, features, forward,
                             init_valuenet, load_checkpoint, policy_from_value, save_checkpoint,
                             td_loss, td_residual, train, value)
from explore_stop.rl.train import whitening_matrix

PUT = Problem(MarketConfig.gbm(40, 40, 0.06, 0.4, 1.0), TimeGrid(50, 1.0))


def tiny_net(seed=0, lam=0.5, rate=0.05, dt=0.1, hidden=(2,), input_dim=2, L=1):
    lays = [NetLayout(input_dim, hidden) for _ in range(L)]
    return init_valuenet(lays, lam, rate, dt, seed)


# ---------------------------------------------------------------- layout / init


def test_parameter_count():
    lays = default_layouts("gbm-1d", 1, 50)
    net = init_valuenet(lays, 1e-4, 0.06, 0.02)
    per = 2 * 21 + 21 + 21 * 21 + 21 + 21 * 1 + 1
    assert net.n_params == 50 * per == 50 * 547


def test_layouts_per_model():
    assert default_layouts("bs-multid", 5, 9)[0].hidden == (25, 25)
    fb = default_layouts("fbm", 1, 100)
    assert fb[0].input_dim == 0 and fb[37].input_dim == 37 and fb[37].hidden == (57, 57)
    with pytest.raises(InvalidConfigError):
        NetLayout(2, (0, 3))


def test_init_deterministic_and_zero_hook():
    lays = default_layouts("gbm-1d", 1, 3)
    a = init_valuenet(lays, 0.1, 0.0, 0.1, seed=4)
    b = init_valuenet(lays, 0.1, 0.0, 0.1, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a.thetas, b.thetas))
    for theta, lay in zip(a.thetas, lays):
        for W, bias in lay.unpack(theta):
            assert np.all(bias == 0)
        W1 = lay.unpack(theta)[0][0]
        assert 0.3 < W1.std() * math.sqrt(2 / 2) ** -1 < 3
    z = init_valuenet(lays, 0.1, 0.0, 0.1, zero=True)
    x = np.array([[36.0, 4.0]])
    assert value(z, 0, x, np.array([4.0]))[0] == 4.0
    zo = init_valuenet(lays, 0.1, 0.0, 0.1, seed=1, zero_output=True)
    assert value(zo, 1, x, np.array([4.0]))[0] == 4.0


# ---------------------------------------------------------------- features / value


def test_features():
    put = np.array([[[36.0], [38.0]]])
    np.testing.assert_array_equal(features("gbm-1d", put, 0, np.array([4.0])), [[36.0, 4.0]])
    mc = np.array([[[90.0, 105.0]]])
    np.testing.assert_array_equal(features("bs-multid", mc, 0, np.array([5.0])), [[90, 105, 5]])
    fb = np.arange(6.0).reshape(1, 6, 1)
    np.testing.assert_array_equal(features("fbm", fb, 3, None), [[1.0, 2.0, 3.0]])
    assert features("fbm", fb, 0, None).shape == (1, 0)
    with pytest.raises(InvalidConfigError):
        features("gbm-1d", np.zeros((1, 2, 2)), 0, np.zeros(1))


def test_value_terminal_and_dimension_check():
    net = init_valuenet(default_layouts("gbm-1d", 1, 2), 0.1, 0.0, 0.5, seed=0)
    assert value(net, 2, None, np.array([4.0, 0.5])).tolist() == [4.0, 0.5]
    with pytest.raises(InvalidConfigError):
        value(net, 0, np.zeros((1, 3)), np.zeros(1))


def test_hand_computed_forward():
    """2-2-1 net with hand-set weights."""
    lay = NetLayout(2, (2,), residual_payoff=False)
    theta = np.zeros(lay.n_params)
    (W1, b1), (W2, b2) = lay.unpack(theta)
    W1[...] = [[1.0, -1.0], [0.5, 2.0]]
    b1[...] = [0.1, -0.2]
    W2[...] = [[2.0], [-3.0]]
    b2[...] = [0.25]
    net = ValueNet([lay], [theta], 0.1, 0.0, 0.1)
    x = np.array([[1.0, 2.0], [-1.0, 0.0]])
    # row 0: h = relu([1+1+0.1, -1+4-0.2]) = [2.1, 2.8] -> 4.2 - 8.4 + 0.25
    # row 1: h = relu([-1+0.1, 1-0.2]) = [0, 0.8] -> -2.4 + 0.25
    np.testing.assert_allclose(value(net, 0, x, np.zeros(2)), [-3.95, -2.15], atol=1e-12)


def test_policy_from_value_examples():
    assert policy_from_value(1.0, 1.0, 0.1, 0.02) == 1.0
    assert policy_from_value(1.1, 1.0, 0.1, 0.02) == pytest.approx(math.exp(-1))
    assert policy_from_value(1.0 - 10 * 0.1, 1.0, 0.1, 0.02) == 50.0
    assert policy_from_value(0.0, 1e6, 1e-6, 0.5) == 2.0


# ---------------------------------------------------------------- TD loss


def test_td_loss_zero_intensity_hand_check():
    """A huge value gap kills pi, so the residual is disc*target - V = g_{l+1} - g_l at r=0."""
    lay = NetLayout(2, (2,))
    net = init_valuenet([lay], 1e-3, 0.0, 0.1, zero=True)
    net.thetas[0][-1] = 1.0  # output bias: V = g + 1, pi = exp(-1000) ~ 0
    g = np.array([4.0, 0.0])
    nxt = np.array([6.0, 2.0])
    loss, _ = td_loss(net, 0, np.array([[36.0, 4.0], [41.0, 0.0]]), g, nxt)
    res = nxt - (g + 1.0)
    assert loss == pytest.approx(np.mean(res**2), rel=1e-12)


def test_td_loss_out_of_money_entropy_only():
    net = init_valuenet([NetLayout(2, (3, 3))], 0.2, 0.0, 0.1, zero=True)
    g = np.zeros(3)
    res, _ = td_residual(net, 0, np.array([[50.0, 0], [60, 0], [70, 0]]), g, np.zeros(3))
    np.testing.assert_allclose(res, 0.2 * 0.1, rtol=1e-14)


def _fd_check(net, x, g, tgt, eps=1e-5):
    _, grad = td_loss(net, 0, x, g, tgt, stopgrad_policy=False)
    fd = np.zeros_like(grad)
    th = net.thetas[0]
    for i in range(len(th)):
        old = th[i]
        th[i] = old + eps
        a = td_loss(net, 0, x, g, tgt, stopgrad_policy=False)[0]
        th[i] = old - eps
        b = td_loss(net, 0, x, g, tgt, stopgrad_policy=False)[0]
        th[i] = old
        fd[i] = (a - b) / (2 * eps)
    return grad, fd


def test_gradient_check_tiny_net():
    net = tiny_net(seed=1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2))
    g = np.abs(rng.normal(size=3))
    tgt = g + 0.2 * rng.normal(size=3)
    grad, fd = _fd_check(net, x, g, tgt)
    scale = np.maximum(np.abs(fd), 1e-8)
    mask = np.abs(fd) > 1e-9
    assert np.max(np.abs(grad - fd)[mask] / scale[mask]) <= 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_gradient_check_random_nets(seed):
    rng = np.random.default_rng(seed)
    net = tiny_net(seed=seed, lam=float(rng.uniform(0.2, 2)), hidden=(4, 3), input_dim=3)
    # generic point: zero biases put dead rows exactly on a ReLU kink
    net.thetas[0] += 0.1 * rng.normal(size=net.thetas[0].shape)
    x = rng.normal(size=(5, 3))
    g = np.abs(rng.normal(size=5))
    tgt = g + 0.3 * rng.normal(size=5)
    grad, fd = _fd_check(net, x, g, tgt)
    denom = np.maximum(np.abs(grad), np.abs(fd))
    mask = denom > 1e-7
    assert np.max(np.abs(grad - fd)[mask] / denom[mask], initial=0.0) <= 1e-4


def test_stopgrad_differs_from_full_gradient():
    net = tiny_net(seed=2, lam=0.3)
    x = np.array([[0.5, 1.0], [-0.3, 0.2]])
    g = np.array([1.0, 0.2])
    tgt = np.array([1.3, 0.1])
    _, full = td_loss(net, 0, x, g, tgt, stopgrad_policy=False)
    _, semi = td_loss(net, 0, x, g, tgt, stopgrad_policy=True)
    assert not np.allclose(full, semi)


def test_target_is_constant():
    """Only theta^l receives a gradient; changing theta^{l+1} moves the loss, not the gradient shape."""
    net = init_valuenet(default_layouts("gbm-1d", 1, 2), 0.1, 0.06, 0.5, seed=3)
    x = np.array([[36.0, 4.0], [42.0, 0.0]])
    g = x[:, 1]
    t1 = value(net, 1, x, g)
    loss1, grad1 = td_loss(net, 0, x, g, t1)
    assert grad1.shape == net.thetas[0].shape
    net.thetas[1] += 0.1
    t2 = value(net, 1, x, g)
    loss2, _ = td_loss(net, 0, x, g, t2)
    assert loss1 != loss2


def test_non_finite_loss_names_path():
    net = tiny_net()
    x = np.array([[0.0, 1.0], [np.nan, 1.0], [1.0, 1.0]])
    with pytest.raises(NonFiniteLossError) as exc:
        td_loss(net, 0, x, np.ones(3), np.ones(3))
    assert exc.value.path_index == 1 and exc.value.time_index == 0


def test_backward_matches_forward_linearization():
    lay = NetLayout(3, (4, 4), residual_payoff=False)
    theta = np.random.default_rng(0).normal(size=lay.n_params)
    z = np.random.default_rng(1).normal(size=(6, 3))
    dy = np.random.default_rng(2).normal(size=6)
    y, acts = forward(lay, theta, z, keep=True)
    g = backward(lay, theta, acts, dy)
    d = np.random.default_rng(3).normal(size=lay.n_params) * 1e-6
    y2 = forward(lay, theta + d, z)
    assert np.dot(dy, y2 - y) == pytest.approx(np.dot(g, d), rel=1e-4)


# ---------------------------------------------------------------- optimizer / normalization


def test_adam_clips_and_moves_against_gradient():
    opt = Adam([3], lr=0.1, clip_norm=1.0)
    th = np.zeros(3)
    opt.step(0, th, np.array([100.0, 0.0, -100.0]))
    np.testing.assert_allclose(th, [-0.1, 0.0, 0.1], atol=1e-6)


def test_whitening_matrix_identity_cov_and_rank_deficiency():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4000, 3)) @ np.array([[1.0, 0.5, 0], [0, 1.0, 0.2], [0, 0, 2.0]])
    P = whitening_matrix(x)
    np.testing.assert_allclose(np.cov((x - x.mean(0)) @ P, rowvar=False), np.eye(3), atol=1e-10)
    xi = rng.normal(size=(500, 1))
    P1 = whitening_matrix(xi * np.array([[0.01, 0.02, 0.03]]))
    assert np.linalg.matrix_rank(P1) == 1


# ---------------------------------------------------------------- training


def test_train_config_validation():
    with pytest.raises(InvalidConfigError):
        TrainConfig(lam=0.0)
    with pytest.raises(InvalidConfigError):
        TrainConfig(iterations=0)
    with pytest.raises(InvalidConfigError):
        TrainConfig(lr=1e-3, lr_final=1e-2)
    cfg = TrainConfig(iterations=11, lr=1e-2, lr_final=1e-4)
    assert cfg.lr_at(1) == pytest.approx(1e-2) and cfg.lr_at(11) == pytest.approx(1e-4)


def test_one_iteration_changes_every_block():
    p = Problem(MarketConfig.gbm(40, 40, 0.06, 0.4, 1.0), TimeGrid(5, 1.0))
    tcfg = TrainConfig(iterations=1, batch_size=256, lam=0.1, test_paths=128, eval_every=1)
    ref = init_valuenet(p.layouts(), 0.1, 0.06, 0.2, seed=0, zero_output=True)
    net, curve = train(p, tcfg)
    for a, b in zip(ref.thetas, net.thetas):
        assert not np.array_equal(a, b)
    assert curve.iterations == [1]


def test_training_deterministic():
    p = Problem(MarketConfig.gbm(40, 40, 0.06, 0.4, 1.0), TimeGrid(5, 1.0))
    tcfg = TrainConfig(iterations=6, batch_size=128, lam=0.1, test_paths=256, eval_every=2)
    _, c1 = train(p, tcfg)
    _, c2 = train(p, tcfg)
    assert c1.estimates == c2.estimates and c1.iterations == [2, 4, 6]


def test_tabular_limit_drives_loss_to_zero():
    """One step, identical paths: the TD target is deterministic and learnable exactly.

    Uses the semi-gradient; the full residual gradient stalls at the pi dt = 1 cap here,
    where the residual is positive but its slope in V changes sign.
    """
    lay = [NetLayout(2, (4,))]
    net = init_valuenet(lay, 0.1, 0.0, 1.0, seed=0, zero_output=True)
    x = np.tile([[38.0, 2.0]], (16, 1))
    g = np.full(16, 2.0)
    tgt = np.full(16, 3.0)
    net.in_shift[0] = np.array([38.0, 2.0])
    opt = Adam([lay[0].n_params], lr=1e-2)
    for _ in range(3000):
        loss, grad = td_loss(net, 0, x, g, tgt, stopgrad_policy=True)
        opt.step(0, net.thetas[0], grad)
    assert loss < 1e-10
    v = value(net, 0, x[:1], g[:1])[0]
    pi = math.exp(-(v - 2.0) / 0.1)
    assert v == pytest.approx(2 * pi + 0.1 * pi * (1 - math.log(pi)) + 3 * (1 - pi), abs=1e-5)


def test_learning_curve(tmp_path):
    from explore_stop.evaluate import EvalReport

    c = LearningCurve(reference=5.311)
    c.append(10, EvalReport(5.296, 0.01, "threshold", 10), 0.1)
    with pytest.raises(ValueError):
        c.append(10, EvalReport(5.3, 0.01, "threshold", 10), 0.1)
    c.to_csv(tmp_path / "lc.csv")
    lines = (tmp_path / "lc.csv").read_text().splitlines()
    assert lines[0] == "iteration,estimate,relative_error"
    assert float(lines[1].split(",")[2]) == pytest.approx(0.015 / 5.311)


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip_and_reproduces_estimate(tmp_path):
    p = Problem(MarketConfig.gbm(40, 40, 0.06, 0.4, 1.0), TimeGrid(5, 1.0))
    tcfg = TrainConfig(iterations=3, batch_size=128, lam=0.1, test_paths=512, eval_every=3)
    net, curve = train(p, tcfg)
    path = tmp_path / "ck.npz"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.layouts == net.layouts and back.lam == net.lam and back.out_scale == net.out_scale
    assert all(np.array_equal(a, b) for a, b in zip(back.thetas, net.thetas))
    test = p.simulate(512, 0, 0)
    assert abs(evaluate_net(back, p, test).estimate - curve.final) <= 1e-12


def test_checkpoint_whitened_round_trip(tmp_path):
    p = Problem(MarketConfig.fbm_model(0.3), TimeGrid(4, 1.0))
    tcfg = TrainConfig(iterations=1, batch_size=64, lam=0.1, test_paths=64, eval_every=1)
    net, _ = train(p, tcfg)
    assert net.in_scale[3].ndim == 2
    save_checkpoint(net, tmp_path / "f.npz")
    back = load_checkpoint(tmp_path / "f.npz")
    assert all(np.array_equal(a, b) for a, b in zip(back.in_scale, net.in_scale))


def test_checkpoint_corruption(tmp_path):
    net = tiny_net()
    path = tmp_path / "ck.npz"
    save_checkpoint(net, path)
    data = path.read_bytes()
    (tmp_path / "trunc.npz").write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trunc.npz")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")
    import explore_stop.rl.checkpoint as ck

    old = ck.FORMAT_VERSION
    try:
        ck.FORMAT_VERSION = old + 1
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)
    finally:
        ck.FORMAT_VERSION = old
