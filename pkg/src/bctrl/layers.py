"""Numpy layers with hand-written backward passes.

Each forward returns ``(output, cache)``; the matching backward takes the
cache and the upstream gradient and returns ``(grad_input, grads)`` where
``grads`` maps parameter names to arrays.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bctrl import flops


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- 2-D convolution, 3x3, replicate "same" padding; x is (C, H, W) ----------


def conv2d_forward(x, w, b, category="guess"):
    """``w`` is ``(C_out, C_in, 3, 3)``, ``b`` is ``(C_out,)``."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (C_in, H, W, 3, 3)
    out = np.einsum("chwkl,ockl->ohw", win, w, optimize=True) + b[:, None, None]
    flops.add(category, 2 * w.size * x.shape[1] * x.shape[2])
    return out, (x.shape, win)


def conv2d_backward(cache, w, gout):
    shape, win = cache
    _, H, W = shape
    dw = np.einsum("chwkl,ohw->ockl", win, gout, optimize=True)
    db = gout.sum(axis=(1, 2))
    dxp = np.zeros((shape[0], H + 2, W + 2))
    for k in range(3):
        for l in range(3):
            dxp[:, k : k + H, l : l + W] += np.einsum("oc,ohw->chw", w[:, :, k, l], gout)
    # fold the replicated border back onto the edge it copied
    dxp[:, 1, :] += dxp[:, 0, :]
    dxp[:, H, :] += dxp[:, H + 1, :]
    dxp[:, :, 1] += dxp[:, :, 0]
    dxp[:, :, W] += dxp[:, :, W + 1]
    return dxp[:, 1 : H + 1, 1 : W + 1], {"w": dw, "b": db}


# -- 1-D circular convolution, kernel 3; x is (L, C) --------------------------


def _shifted(x):
    # position p sees x[p-1], x[p], x[p+1] (cyclic)
    return [np.roll(x, 1, axis=0), x, np.roll(x, -1, axis=0)]


def conv1d_forward(x, w, b, category="net"):
    """``w`` is ``(C_out, C_in, 3)``; wraps around the ring."""
    xs = _shifted(x)
    out = b + sum(xs[k] @ w[:, :, k].T for k in range(3))
    flops.add(category, 2 * w.size * x.shape[0])
    return out, xs


def conv1d_backward(xs, w, gout):
    dw = np.stack([gout.T @ xs[k] for k in range(3)], axis=2)
    db = gout.sum(axis=0)
    d = [gout @ w[:, :, k] for k in range(3)]
    dx = np.roll(d[0], -1, axis=0) + d[1] + np.roll(d[2], 1, axis=0)
    return dx, {"w": dw, "b": db}


# -- LSTM cell applied independently at every ring position -------------------


def lstm_forward(x, h, c, wx, wh, b, category="net"):
    """Gate order ``i, f, g, o``; ``wx`` is ``(C_in, 4H)``, ``wh`` is ``(H, 4H)``."""
    H = h.shape[1]
    z = x @ wx + h @ wh + b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    flops.add(category, 2 * (wx.size + wh.size) * x.shape[0] + 20 * h.size)
    return h_new, c_new, (x, h, c, i, f, g, o, tc)


def lstm_backward(cache, wx, wh, dh_new, dc_new):
    """Returns ``(dx, dh_prev, dc_prev, grads)``."""
    x, h, c, i, f, g, o, tc = cache
    do = dh_new * tc
    dc = dc_new + dh_new * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
    )
    grads = {"wx": x.T @ dz, "wh": h.T @ dz, "b": dz.sum(axis=0)}
    return dz @ wx.T, dz @ wh.T, dc_prev, grads
