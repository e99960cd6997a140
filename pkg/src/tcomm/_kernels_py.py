"""Pure numpy implementations of the hot kernels.

Mirrors the compiled ``_kernels`` extension function-for-function; used when
the extension is not built or ``TCOMM_PURE_PYTHON=1`` is set.
"""

import numpy as np

LINEAR, RELU, TANH, SOFTMAX = 0, 1, 2, 3


def softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def dense_forward(x, W, b, act):
    z = x @ W.T
    z += b
    if act == RELU:
        np.maximum(z, 0.0, out=z)
    elif act == TANH:
        np.tanh(z, out=z)
    elif act == SOFTMAX:
        z = softmax_rows(z)
    return z


def dense_backward(x, W, y, act, gy, gW, gb, need_gx=True):
    """Writes weight/bias grads into ``gW``/``gb``; returns the input grad."""
    if act == RELU:
        gz = gy * (y > 0.0)
    elif act == TANH:
        gz = gy * (1.0 - y * y)
    elif act == SOFTMAX:
        gz = y * (gy - np.sum(gy * y, axis=1, keepdims=True))
    else:
        gz = gy
    np.matmul(gz.T, x, out=gW)
    np.sum(gz, axis=0, out=gb)
    if need_gx:
        return gz @ W
    return None


def powernorm_forward(x):
    d = x.shape[1]
    energy = np.einsum("ij,ij->i", x, x)
    scale = np.sqrt(d / energy)
    return x * scale[:, None], scale


def powernorm_backward(y, scale, gy):
    d = y.shape[1]
    proj = np.einsum("ij,ij->i", gy, y) / d
    return scale[:, None] * (gy - y * proj[:, None])


def adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
