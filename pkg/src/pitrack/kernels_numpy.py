"""Pure numpy implementations of the hot kernels.

Fallback path used when numba acceleration is off (see pitrack.backend).
Matrix products are not listed here: np.dot already dispatches to BLAS on
both paths.
"""

import numpy as np

from ._lap import lap_solve_impl as lap_solve


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(y, gy):
    inner = (y * gy).sum(axis=1, keepdims=True)
    return y * (gy - inner)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def sigmoid_grad(y, gy):
    return gy * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y, gy):
    return gy * (1.0 - y * y)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)
