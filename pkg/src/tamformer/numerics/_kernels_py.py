"""Pure numpy versions of the compiled row kernels (same signatures)."""

import numpy as np


def softmax_fwd(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def layer_norm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    c = x - mean
    rstd = 1.0 / np.sqrt((c * c).mean(axis=1) + eps)
    xhat = c * rstd[:, None]
    return xhat * gain + bias, xhat, rstd


def layer_norm_bwd(gy, xhat, rstd, gain):
    g = gy * gain
    m1 = g.mean(axis=1, keepdims=True)
    m2 = (g * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (g - m1 - xhat * m2)
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)
