import numpy as np
import pytest
from conftest import rel_err

from bctrl.layers import (
    conv1d_backward, conv1d_forward, conv2d_backward, conv2d_forward, lstm_backward, lstm_forward,
)


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        dn = f()
        x[i] = old
        g[i] = (up - dn) / (2 * eps)
    return g


def test_conv2d_backward(rng):
    x = rng.standard_normal((2, 5, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    proj = rng.standard_normal((3, 5, 4))
    f = lambda: float(np.sum(conv2d_forward(x, w, b)[0] * proj))
    _, cache = conv2d_forward(x, w, b)
    dx, grads = conv2d_backward(cache, w, proj)
    assert rel_err(dx, fd_grad(f, x)) < 1e-7
    assert rel_err(grads["w"], fd_grad(f, w)) < 1e-7
    assert rel_err(grads["b"], fd_grad(f, b)) < 1e-7


def test_conv2d_replicate_padding():
    x = np.ones((1, 4, 4))
    w = np.ones((1, 1, 3, 3))
    out, _ = conv2d_forward(x, w, np.zeros(1))
    np.testing.assert_allclose(out, 9.0)


@pytest.mark.parametrize("L", [1, 2, 7])
def test_conv1d_backward(L, rng):
    x = rng.standard_normal((L, 3))
    w = rng.standard_normal((4, 3, 3))
    b = rng.standard_normal(4)
    proj = rng.standard_normal((L, 4))
    f = lambda: float(np.sum(conv1d_forward(x, w, b)[0] * proj))
    _, xs = conv1d_forward(x, w, b)
    dx, grads = conv1d_backward(xs, w, proj)
    assert rel_err(dx, fd_grad(f, x)) < 1e-7
    assert rel_err(grads["w"], fd_grad(f, w)) < 1e-7


def test_conv1d_wraps():
    x = np.zeros((5, 1))
    x[0, 0] = 1.0
    w = np.zeros((1, 1, 3))
    w[0, 0, 0] = 1.0  # reads the previous position
    out, _ = conv1d_forward(x, w, np.zeros(1))
    assert out[1, 0] == 1.0 and out.sum() == 1.0


def test_lstm_backward(rng):
    L, C, H = 6, 3, 4
    x, h, c = rng.standard_normal((L, C)), rng.standard_normal((L, H)), rng.standard_normal((L, H))
    wx, wh, b = rng.standard_normal((C, 4 * H)), rng.standard_normal((H, 4 * H)), rng.standard_normal(4 * H)
    ph, pc = rng.standard_normal((L, H)), rng.standard_normal((L, H))

    def f():
        hn, cn, _ = lstm_forward(x, h, c, wx, wh, b)
        return float(np.sum(hn * ph) + np.sum(cn * pc))

    _, _, cache = lstm_forward(x, h, c, wx, wh, b)
    dx, dh, dc, grads = lstm_backward(cache, wx, wh, ph, pc)
    for analytic, arr in ((dx, x), (dh, h), (dc, c), (grads["wx"], wx), (grads["wh"], wh), (grads["b"], b)):
        assert rel_err(analytic, fd_grad(f, arr)) < 1e-7
