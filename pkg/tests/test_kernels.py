import numpy as np
import pytest

from hjpc import kernels
from hjpc.kernels import _ref

_fast = pytest.importorskip("hjpc.kernels._fast", reason="compiled extension not built")


def _random_step_args(rng):
    x, v, th, w = rng.uniform(-1.5, 1.5, 4)
    force = rng.uniform(-20, 20)
    return (x, v, th, w, force, np.sin(th), np.cos(th), 1.0, 0.1, 0.5, 9.81, 1e-3)


def test_cartpole_step_bitwise_parity():
    rng = np.random.default_rng(7)
    for _ in range(500):
        args = _random_step_args(rng)
        assert _fast.cartpole_step(*args) == _ref.cartpole_step(*args)


def test_render_frame_bitwise_parity():
    rng = np.random.default_rng(8)
    for _ in range(100):
        a = np.empty((24, 24))
        b = np.empty((24, 24))
        cart_x = rng.uniform(-2, 2)
        th = rng.uniform(-1.2, 1.2)
        ex, ey = np.sin(th), np.cos(th)
        scale = 4.8 / 24
        args = (cart_x, -0.5, 0.25, 0.125, -0.375, ex, ey, ex * ex + ey * ey, 0.6 * scale, scale)
        _fast.render_frame(a, *args)
        _ref.render_frame(b, *args)
        assert np.array_equal(a, b)


def test_kernels_deterministic():
    args = _random_step_args(np.random.default_rng(9))
    assert kernels.cartpole_step(*args) == kernels.cartpole_step(*args)
    a = np.empty((16, 16))
    b = np.empty((16, 16))
    scale = 4.8 / 16
    rargs = (0.3, -0.5, 0.25, 0.125, -0.375, 0.1, 0.99, 0.9902, 0.6 * scale, scale)
    kernels.render_frame(a, *rargs)
    kernels.render_frame(b, *rargs)
    assert np.array_equal(a, b)


def test_backend_reports_selection():
    assert kernels.BACKEND in ("compiled", "pure")
    assert kernels.cartpole_step is _fast.cartpole_step or kernels.cartpole_step is _ref.cartpole_step
