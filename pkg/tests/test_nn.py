import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjpc import nn
from hjpc.errors import ConfigurationError


def _net(dims, rng_seed=0, **kw):
    return nn.init_mlp(dims, np.random.default_rng(rng_seed), **kw)


# ------------------------------------------------------------- structure/init


def test_init_bounds_and_zero_biases():
    net = _net([7, 11, 3])
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        bound = math.sqrt(6.0 / (w.shape[1] + w.shape[0]))
        assert np.all(np.abs(w) <= bound)
        assert np.all(b == 0.0)
    assert net.in_dim == 7 and net.out_dim == 3 and net.n_layers == 2


def test_init_seeded_reproducibility():
    a, b = _net([4, 5, 2], 3), _net([4, 5, 2], 3)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))


def test_mlp_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        nn.init_mlp([4], rng)
    with pytest.raises(ConfigurationError):
        nn.Mlp([rng.normal(size=(3, 4))], [np.zeros(3)], ("relu",), (False,))  # output not linear
    with pytest.raises(ConfigurationError):
        nn.Mlp([rng.normal(size=(3, 4))], [np.zeros(3)], ("linear",), (True,))  # residual non-square
    with pytest.raises(ConfigurationError):
        nn.Mlp([], [], (), ())


def test_flat_round_trip():
    net = _net([3, 4, 2], 5)
    vec = net.flat()
    other = _net([3, 4, 2], 6)
    other.set_flat(vec)
    assert np.array_equal(other.flat(), vec)
    with pytest.raises(ConfigurationError):
        net.set_flat(vec[:-1])


# -------------------------------------------------------------------- forward


def test_forward_linear_closed_form():
    net = _net([4, 3], 1, activations=["linear"])
    x = np.random.default_rng(2).normal(size=(5, 4))
    y, _ = nn.forward(net, x)
    assert np.array_equal(y, x @ net.weights[0].T + net.biases[0])
    y1, _ = nn.forward(net, x[0])
    assert np.array_equal(y1, x[0] @ net.weights[0].T + net.biases[0])
    # gemv and gemm rows may differ in the last bit
    assert np.allclose(y1, y[0], atol=1e-12)


def test_forward_relu_and_residual():
    net = _net([3, 3], 1, activations=["linear"], residual=[True])
    x = np.random.default_rng(4).normal(size=(6, 3))
    y, _ = nn.forward(net, x)
    assert np.array_equal(y, x @ net.weights[0].T + net.biases[0] + x)
    relu_net = nn.Mlp(
        [np.eye(3), np.eye(3)],
        [np.array([-0.5, 0.0, 0.5]), np.zeros(3)],
        ("relu", "linear"),
        (False, False),
    )
    y2, _ = nn.forward(relu_net, np.ones((1, 3)))
    assert np.array_equal(y2, [[0.5, 1.0, 1.5]])


def test_forward_rejects_wrong_width():
    with pytest.raises(ConfigurationError):
        nn.forward(_net([4, 2]), np.zeros(3))


# ------------------------------------------------------------------- backward


@pytest.mark.parametrize(
    "dims,residual",
    [
        ([3, 5, 2], None),
        ([4, 4, 4, 1], [False, True, False]),
        ([2, 6, 6, 3], [False, True, False]),
    ],
)
def test_backward_matches_finite_differences(dims, residual):
    rng = np.random.default_rng(sum(dims))
    net = nn.init_mlp(dims, rng, residual=residual)
    x = rng.normal(size=(3, dims[0]))
    proj = rng.normal(size=(3, dims[-1]))

    out, cache = nn.forward(net, x)
    grads, gin = nn.backward(net, cache, proj)
    flat_analytic = np.concatenate([np.concatenate([dw.ravel(), db.ravel()]) for dw, db in grads])

    def f(vec):
        probe = net.clone()
        probe.set_flat(vec)
        y, _ = nn.forward(probe, x)
        return float((y * proj).sum())

    flat_fd = nn.finite_difference_gradient(f, net.flat())
    denom = max(np.max(np.abs(flat_fd)), 1e-8)
    assert np.max(np.abs(flat_analytic - flat_fd)) / denom <= 1e-4

    def fx(xv):
        y, _ = nn.forward(net, xv.reshape(x.shape))
        return float((y * proj).sum())

    gin_fd = nn.finite_difference_gradient(fx, x.ravel()).reshape(x.shape)
    assert np.max(np.abs(gin - gin_fd)) / max(np.max(np.abs(gin_fd)), 1e-8) <= 1e-4


# --------------------------------------------------------------------- losses


def test_cosine_loss_reference_points():
    v = np.array([1.0, 2.0, 2.0])
    loss_same, _ = nn.cosine_loss(v, v)
    assert loss_same == pytest.approx(0.0, abs=1e-7)
    loss_orth, _ = nn.cosine_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert loss_orth == pytest.approx(1.0, abs=1e-7)
    loss_anti, _ = nn.cosine_loss(v, -v)
    assert loss_anti == pytest.approx(2.0, abs=1e-7)
    batch = np.stack([v, v])
    loss_b, grad_b = nn.cosine_loss(batch, np.stack([v, -v]))
    assert loss_b == pytest.approx(1.0, abs=1e-7)
    assert grad_b.shape == batch.shape
    with pytest.raises(ConfigurationError):
        nn.cosine_loss(v, v[:2])


@given(scale=st.floats(min_value=0.1, max_value=10.0, allow_nan=False))
@settings(max_examples=50, deadline=None)
def test_cosine_loss_scale_invariant(scale):
    rng = np.random.default_rng(17)
    p = rng.normal(size=(4, 6)) + 0.5
    t = rng.normal(size=(4, 6)) + 0.5
    base, _ = nn.cosine_loss(p, t)
    scaled, _ = nn.cosine_loss(scale * p, t)
    assert scaled == pytest.approx(base, abs=1e-6)


def test_cosine_loss_gradient_fd():
    rng = np.random.default_rng(23)
    p = rng.normal(size=(2, 5))
    t = rng.normal(size=(2, 5))
    _, grad = nn.cosine_loss(p, t)
    fd = nn.finite_difference_gradient(lambda v: nn.cosine_loss(v.reshape(2, 5), t)[0], p.ravel())
    assert np.max(np.abs(grad.ravel() - fd)) <= 1e-6


def test_mse_loss():
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    t = np.zeros((2, 2))
    loss, grad = nn.mse_loss(p, t)
    assert loss == pytest.approx((1 + 4 + 9 + 16) / 4)
    assert np.array_equal(grad, 2 * p / 4)
    fd = nn.finite_difference_gradient(lambda v: nn.mse_loss(v.reshape(2, 2), t)[0], p.ravel())
    assert np.max(np.abs(grad.ravel() - fd)) <= 1e-6
    with pytest.raises(ConfigurationError):
        nn.mse_loss(p, np.zeros(3))


# ------------------------------------------------------------------------ sgd


def test_sgd_config_validation():
    with pytest.raises(ConfigurationError):
        nn.SgdConfig(learning_rate=0.0)
    with pytest.raises(ConfigurationError):
        nn.SgdConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        nn.SgdConfig(grad_clip=-1.0)


def test_sgd_descends_quadratic():
    net = _net([1, 8, 1], 9)
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, size=(64, 1))
    y = 2.0 * x
    cfg = nn.SgdConfig(learning_rate=0.05, batch_size=64, epochs=1)
    losses = []
    for _ in range(60):
        out, cache = nn.forward(net, x)
        loss, gout = nn.mse_loss(out, y)
        losses.append(loss)
        grads, _ = nn.backward(net, cache, gout)
        assert nn.sgd_step(net, grads, cfg)
    assert losses[-1] < 0.05 * losses[0]


def test_sgd_rejects_nonfinite():
    net = _net([2, 2], 1)
    before = net.flat()
    grads = [(np.full((2, 2), np.nan), np.zeros(2))]
    assert not nn.sgd_step(net, grads, nn.SgdConfig())
    assert np.array_equal(net.flat(), before)


def test_sgd_joint_clip_uses_joint_norm():
    a = _net([2, 2], 1, activations=["linear"])
    b = _net([2, 2], 2, activations=["linear"])
    ga = [(np.full((2, 2), 1.5), np.zeros(2))]  # norm 3
    gb = [(np.full((2, 2), 2.0), np.zeros(2))]  # norm 4 -> joint 5
    before_a, before_b = a.flat(), b.flat()
    cfg = nn.SgdConfig(learning_rate=1.0, grad_clip=2.5)
    assert nn.sgd_step_joint([(a, ga), (b, gb)], cfg)
    # joint norm 5 > clip 2.5 scales every step by 0.5
    assert np.allclose(before_a - a.flat(), 0.5 * np.concatenate([np.full(4, 1.5), np.zeros(2)]))
    assert np.allclose(before_b - b.flat(), 0.5 * np.concatenate([np.full(4, 2.0), np.zeros(2)]))


def test_grad_global_norm():
    g = [[(np.array([[3.0]]), np.array([4.0]))]]
    assert nn.grad_global_norm(g) == pytest.approx(5.0)


def test_grad_ops_are_functional():
    net = _net([2, 3], 1)
    z = nn.zero_grads(net)
    g1 = [(np.ones_like(w), np.ones_like(b)) for w, b in zip(net.weights, net.biases)]
    total = nn.add_grads(z, g1)
    assert all(np.all(dw == 0.0) for dw, _ in z)  # inputs untouched
    assert all(np.all(dw == 1.0) for dw, _ in total)
    scaled = nn.scale_grads(total, 2.0)
    assert all(np.all(dw == 2.0) for dw, _ in scaled)
    assert all(np.all(dw == 1.0) for dw, _ in total)


# ------------------------------------------------------------------------ ema


def test_ema_endpoints_exact():
    online = _net([3, 4, 2], 1)
    target = _net([3, 4, 2], 2)
    snap = target.flat()
    nn.ema_update(target, online, 1.0)
    assert np.array_equal(target.flat(), snap)
    nn.ema_update(target, online, 0.0)
    assert np.array_equal(target.flat(), online.flat())


def test_ema_midpoint_and_replay_algebra():
    online = _net([2, 3, 1], 3)
    target = _net([2, 3, 1], 4)
    t0, o = target.flat(), online.flat()
    nn.ema_update(target, online, 0.5)
    assert np.allclose(target.flat(), 0.5 * t0 + 0.5 * o, atol=1e-15)
    # n fixed-online updates telescope to eta^n t0 + (1 - eta^n) o
    target.set_flat(t0)
    eta, n = 0.99, 10
    for _ in range(n):
        nn.ema_update(target, online, eta)
    assert np.max(np.abs(target.flat() - (eta**n * t0 + (1 - eta**n) * o))) <= 1e-12


def test_ema_validation():
    online, target = _net([2, 2], 1), _net([2, 2], 2)
    with pytest.raises(ConfigurationError):
        nn.ema_update(target, online, 1.5)
    with pytest.raises(ConfigurationError):
        nn.ema_update(_net([2, 3, 2], 1), _net([2, 2], 1), 0.5)


def test_finite_difference_gradient_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    fd = nn.finite_difference_gradient(lambda v: float((v * v).sum()), x)
    assert np.allclose(fd, 2 * x, atol=1e-6)
