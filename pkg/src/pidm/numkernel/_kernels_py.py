"""Pure-numpy row kernels; the fallback when the compiled extension is absent.

Every function works on 2-D C-contiguous arrays whose last axis is the
reduction axis. Callers reshape leading dimensions away.
"""
import numpy as np


def softmax_forward(x):
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_backward(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_forward(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layernorm_backward(gy, xhat, rstd, gain):
    g_gain = (gy * xhat).sum(axis=0)
    g_bias = gy.sum(axis=0)
    gxhat = gy * gain
    mean_g = gxhat.mean(axis=1, keepdims=True)
    mean_gx = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = (gxhat - mean_g - xhat * mean_gx) * rstd[:, None]
    return gx, g_gain, g_bias
