"""Layer primitives with hand-written backward passes.

Activations are ``(N, C, H, W)`` float64 arrays. Convolutions are
resolution-preserving: zero padding of ``dilation * (k - 1) // 2``.
"""
from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def _offsets(k: int, dilation: int):
    return [(u * dilation, v * dilation) for u in range(k) for v in range(k)]


def im2col(x: np.ndarray, k: int, dilation: int) -> np.ndarray:
    """Stack the k*k dilated taps: ``(N, C*k*k, H*W)`` with tap as the fast index."""
    n, c, h, w = x.shape
    pad = dilation * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k * k, h, w))
    for tap, (dy, dx) in enumerate(_offsets(k, dilation)):
        cols[:, :, tap] = xp[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(n, c * k * k, h * w)


def col2im(cols: np.ndarray, shape, k: int, dilation: int) -> np.ndarray:
    """Adjoint of :func:`im2col`."""
    n, c, h, w = shape
    pad = dilation * (k - 1) // 2
    cols = cols.reshape(n, c, k * k, h, w)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for tap, (dy, dx) in enumerate(_offsets(k, dilation)):
        xp[:, :, dy:dy + h, dx:dx + w] += cols[:, :, tap]
    return xp[:, :, pad:pad + h, pad:pad + w]


def conv_forward(x, weight, bias, dilation: int = 1):
    n, c, h, w = x.shape
    out_c, in_c, k, _ = weight.shape
    if in_c != c:
        raise ValueError(f"conv expects {in_c} input channels, got {c}")
    cols = im2col(x, k, dilation)
    y = np.matmul(weight.reshape(out_c, -1), cols) + bias[None, :, None]
    return y.reshape(n, out_c, h, w), (cols, x.shape, weight, dilation)


def conv_backward(dy, cache):
    cols, xshape, weight, dilation = cache
    n, out_c, h, w = dy.shape
    k = weight.shape[2]
    dy2 = dy.reshape(n, out_c, h * w)
    dweight = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
    dbias = dy2.sum(axis=(0, 2))
    dcols = np.matmul(weight.reshape(out_c, -1).T, dy2)
    dx = col2im(dcols, xshape, k, dilation)
    return dx, dweight, dbias


def bn_forward(x, gamma, beta, running_mean, running_var, train: bool):
    """Batch norm over ``(N, H, W)`` per channel.

    In train mode the mini-batch statistics are used and returned in the
    cache so the caller can fold them into the running averages.
    """
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, inv_std, gamma, mean, var, train)


def bn_backward(dy, cache):
    xhat, inv_std, gamma, _, _, train = cache
    dgamma = np.sum(dy * xhat, axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    if not train:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    s2 = np.sum(dxhat * xhat, axis=(0, 2, 3), keepdims=True)
    dx = inv_std[None, :, None, None] / m * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask
