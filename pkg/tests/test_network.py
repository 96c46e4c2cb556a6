import numpy as np
import pytest

from cfcv.network import Adam, CfrNetwork, elu, elu_grad
from cfcv.sinkhorn import sinkhorn_plan


def _toy_batch(seed=0, n=10, d=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    t = np.array([1, 0] * (n // 2), dtype=np.int64)
    y = rng.normal(size=n)
    w = rng.uniform(0.5, 2.0, size=n)
    return X, t, y, w


def test_elu_spot_values():
    z = np.array([-1.0, 0.0, 2.0])
    out = elu(z)
    assert abs(out[0] - (np.exp(-1.0) - 1.0)) < 1e-15
    assert out[1] == 0.0 and out[2] == 2.0
    g = elu_grad(z)
    assert abs(g[0] - np.exp(-1.0)) < 1e-15
    assert g[2] == 1.0


def test_finite_difference_gradients():
    """Analytic gradients of risk + alpha * IPM vs central differences."""
    X, t, y, w = _toy_batch(seed=1)
    net = CfrNetwork(n_features=2, rep_layers=1, rep_dim=4, head_layers=1,
                     head_dim=3, seed=0)
    alpha = 0.7
    reg = 0.1

    # freeze the coupling so the objective is a fixed smooth function
    R = net.representation(X)
    plan = sinkhorn_plan(R[t == 1], R[t == 0], reg=reg).plan

    def objective():
        loss, _, _, _ = net.loss_and_grads(X, t, y, w, alpha,
                                           sinkhorn_reg=reg, plan=plan)
        return loss

    _, _, _, grads = net.loss_and_grads(X, t, y, w, alpha,
                                        sinkhorn_reg=reg, plan=plan)
    theta = net.flat_params()
    flat_grad = np.concatenate([g.ravel() for g in grads])

    eps = 1e-5
    worst = 0.0
    for i in range(theta.size):
        plus = theta.copy(); plus[i] += eps
        minus = theta.copy(); minus[i] -= eps
        net.set_flat_params(plus)
        f_hi = objective()
        net.set_flat_params(minus)
        f_lo = objective()
        net.set_flat_params(theta)
        fd = (f_hi - f_lo) / (2 * eps)
        denom = max(abs(fd), abs(flat_grad[i]), 1e-8)
        worst = max(worst, abs(fd - flat_grad[i]) / denom)
    assert worst < 1e-4


def test_zero_layer_network_is_linear():
    """rep_layers=0 and head_layers=0 collapse to two linear maps of X."""
    net = CfrNetwork(n_features=3, rep_layers=0, head_layers=0, seed=1)
    X = np.random.default_rng(3).normal(size=(20, 3))
    f0, f1 = net.predict_heads(X)
    # linearity: f(a+b) = f(a) + f(b) - f(0)
    a, b = X[:10], X[10:]
    f0_ab, _ = net.predict_heads(a + b)
    f0_a, _ = net.predict_heads(a)
    f0_b, _ = net.predict_heads(b)
    f0_zero, _ = net.predict_heads(np.zeros((10, 3)))
    assert np.allclose(f0_ab, f0_a + f0_b - f0_zero, atol=1e-10)


def test_predictions_finite_and_deterministic():
    X, t, y, w = _toy_batch(seed=4)
    a = CfrNetwork(n_features=2, seed=9)
    b = CfrNetwork(n_features=2, seed=9)
    fa = a.predict_heads(X)
    fb = b.predict_heads(X)
    assert np.array_equal(fa[0], fb[0]) and np.array_equal(fa[1], fb[1])
    assert np.all(np.isfinite(fa[0])) and np.all(np.isfinite(fa[1]))


def test_predict_factual_routes_by_arm():
    X, t, y, w = _toy_batch(seed=5)
    net = CfrNetwork(n_features=2, seed=0)
    f0, f1 = net.predict_heads(X)
    fact = net.predict_factual(X, t)
    assert np.array_equal(fact, np.where(t == 1, f1, f0))


def test_alpha_zero_skips_ipm():
    X, t, y, w = _toy_batch(seed=6)
    net = CfrNetwork(n_features=2, seed=0)
    loss, risk, ipm, _ = net.loss_and_grads(X, t, y, w, alpha=0.0)
    assert ipm == 0.0
    assert loss == risk


def test_single_arm_batch_has_zero_ipm():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(6, 2))
    t = np.ones(6, dtype=np.int64)
    y = rng.normal(size=6)
    w = np.ones(6)
    net = CfrNetwork(n_features=2, seed=0)
    _, _, ipm, _ = net.loss_and_grads(X, t, y, w, alpha=1.0)
    assert ipm == 0.0


def test_dropout_requires_rng():
    X, t, y, w = _toy_batch(seed=8)
    net = CfrNetwork(n_features=2, seed=0)
    with pytest.raises(ValueError, match="rng"):
        net.loss_and_grads(X, t, y, w, alpha=0.0, dropout=0.5)


def test_snapshot_restore_round_trip():
    X, t, y, w = _toy_batch(seed=9)
    net = CfrNetwork(n_features=2, seed=0)
    before = net.flat_params()
    snap = net.snapshot()
    _, _, _, grads = net.loss_and_grads(X, t, y, w, alpha=0.0)
    params = net.param_list()
    opt = Adam(params, learning_rate=0.1)
    opt.step(params, grads)
    assert not np.array_equal(net.flat_params(), before)
    net.restore(snap)
    assert np.array_equal(net.flat_params(), before)


def test_adam_minimizes_quadratic():
    """Adam on f(p) = |p - c|^2 / 2 should walk p to c."""
    target = np.array([[1.0, -2.0], [0.5, 3.0]])
    p = np.zeros_like(target)
    opt = Adam([p], learning_rate=0.05)
    for _ in range(2000):
        opt.step([p], [p - target])
    assert np.max(np.abs(p - target)) < 1e-6


def test_zero_weights_mean_no_risk_gradient():
    X, t, y, w = _toy_batch(seed=10)
    net = CfrNetwork(n_features=2, seed=0)
    loss, risk, ipm, grads = net.loss_and_grads(
        X, t, y, np.zeros_like(w), alpha=0.0
    )
    assert risk == 0.0
    assert all(np.all(g == 0.0) for g in grads)
