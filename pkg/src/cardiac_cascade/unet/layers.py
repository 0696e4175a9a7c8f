"""Layer primitives with hand-written backward passes.

Activations are channels-last, ``(N, H, W, C)``, so every convolution is a
single matmul over an im2col view.  Kernels use the usual channels-first
weight layouts: ``(C_out, C_in, kh, kw)`` for convolutions and
``(C_in, C_out, 2, 2)`` for the transposed convolution.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes ``(dout, cache)`` and returns the input gradient followed by the
parameter gradients.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv3x3_forward(x, w, b):
    """Same-padded 3x3 convolution, stride 1."""
    n, h, wd, c = x.shape
    c_out = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * h * wd, c * 9)
    wmat = w.reshape(c_out, c * 9)
    out = cols @ wmat.T
    out += b
    return out.reshape(n, h, wd, c_out), (x.shape, cols, wmat)


def conv3x3_backward(dout, cache):
    (n, h, wd, c), cols, wmat = cache
    c_out = wmat.shape[0]
    g = dout.reshape(-1, c_out)
    dw = (g.T @ cols).reshape(c_out, c, 3, 3)
    db = g.sum(axis=0)
    dcols = (g @ wmat).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, h + 2, wd + 2, c), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + wd, :] += dcols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def conv1x1_forward(x, w, b):
    n, h, wd, c = x.shape
    c_out = w.shape[0]
    wmat = w.reshape(c_out, c)
    xm = x.reshape(-1, c)
    out = xm @ wmat.T
    out += b
    return out.reshape(n, h, wd, c_out), (x.shape, xm, wmat)


def conv1x1_backward(dout, cache):
    shape, xm, wmat = cache
    c_out = wmat.shape[0]
    g = dout.reshape(-1, c_out)
    dw = (g.T @ xm).reshape(c_out, shape[3], 1, 1)
    db = g.sum(axis=0)
    dx = (g @ wmat).reshape(shape)
    return dx, dw, db


def down_forward(x, w, b):
    """2x2 convolution with stride 2; H and W must be even."""
    n, h, wd, c = x.shape
    if h % 2 or wd % 2:
        raise ValueError(f"strided conv needs even H, W; got {h}x{wd}")
    c_out = w.shape[0]
    h2, w2 = h // 2, wd // 2
    cols = (
        x.reshape(n, h2, 2, w2, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n * h2 * w2, c * 4)
    )
    wmat = w.reshape(c_out, c * 4)
    out = cols @ wmat.T
    out += b
    return out.reshape(n, h2, w2, c_out), (x.shape, cols, wmat)


def down_backward(dout, cache):
    (n, h, wd, c), cols, wmat = cache
    c_out = wmat.shape[0]
    g = dout.reshape(-1, c_out)
    dw = (g.T @ cols).reshape(c_out, c, 2, 2)
    db = g.sum(axis=0)
    dx = (
        (g @ wmat)
        .reshape(n, h // 2, wd // 2, c, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, h, wd, c)
    )
    return dx, dw, db


def up_forward(x, w, b):
    """2x2 transposed convolution with stride 2 (doubles H and W)."""
    n, h, wd, c = x.shape
    c_out = w.shape[1]
    xm = x.reshape(-1, c)
    wmat = w.reshape(c, c_out * 4)
    out = (
        (xm @ wmat)
        .reshape(n, h, wd, c_out, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, 2 * h, 2 * wd, c_out)
    )
    out += b
    return out, (x.shape, xm, wmat)


def up_backward(dout, cache):
    (n, h, wd, c), xm, wmat = cache
    c_out = wmat.shape[1] // 4
    g = (
        dout.reshape(n, h, 2, wd, 2, c_out)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n * h * wd, c_out * 4)
    )
    dx = (g @ wmat.T).reshape(n, h, wd, c)
    dw = (xm.T @ g).reshape(c, c_out, 2, 2)
    db = dout.sum(axis=(0, 1, 2))
    return dx, dw, db


def instance_norm_forward(x, gamma, beta, eps):
    """Per-sample, per-channel standardisation over H and W."""
    mean = x.mean(axis=(1, 2), keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gamma + beta, (xhat, inv_std, gamma)


def instance_norm_backward(dout, cache):
    xhat, inv_std, gamma = cache
    m = xhat.shape[1] * xhat.shape[2]
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    s1 = dxhat.sum(axis=(1, 2), keepdims=True)
    s2 = (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
    dx = (inv_std / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


def leaky_relu_forward(x, slope):
    positive = x > 0
    return np.where(positive, x, slope * x), (positive, slope)


def leaky_relu_backward(dout, cache):
    positive, slope = cache
    return np.where(positive, dout, slope * dout)


def concat_forward(skip, up):
    return np.concatenate([skip, up], axis=-1), skip.shape[-1]


def concat_backward(dout, split):
    return dout[..., :split], dout[..., split:]
