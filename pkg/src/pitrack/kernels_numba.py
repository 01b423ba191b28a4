"""Numba-compiled kernels for the hot inner loops.

Loop formulations avoid the temporaries the vectorized numpy path allocates;
on the small per-frame matrices this package works with, call overhead is
most of the cost, so the jitted versions win despite identical asymptotics.
"""

import numba
import numpy as np

from . import _lap

lap_solve = numba.njit(cache=True)(_lap.lap_solve_impl)


@numba.njit(cache=True)
def softmax_rows(x):
    rows, cols = x.shape
    out = np.empty_like(x)
    for i in range(rows):
        hi = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > hi:
                hi = x[i, j]
        total = 0.0
        for j in range(cols):
            e = np.exp(x[i, j] - hi)
            out[i, j] = e
            total += e
        for j in range(cols):
            out[i, j] /= total
    return out


@numba.njit(cache=True)
def softmax_rows_grad(y, gy):
    rows, cols = y.shape
    out = np.empty_like(y)
    for i in range(rows):
        inner = 0.0
        for j in range(cols):
            inner += y[i, j] * gy[i, j]
        for j in range(cols):
            out[i, j] = y[i, j] * (gy[i, j] - inner)
    return out


@numba.njit(cache=True)
def sigmoid(x):
    rows, cols = x.shape
    out = np.empty_like(x)
    for i in range(rows):
        for j in range(cols):
            out[i, j] = 1.0 / (1.0 + np.exp(-x[i, j]))
    return out


@numba.njit(cache=True)
def sigmoid_grad(y, gy):
    rows, cols = y.shape
    out = np.empty_like(y)
    for i in range(rows):
        for j in range(cols):
            out[i, j] = gy[i, j] * y[i, j] * (1.0 - y[i, j])
    return out


@numba.njit(cache=True)
def tanh(x):
    rows, cols = x.shape
    out = np.empty_like(x)
    for i in range(rows):
        for j in range(cols):
            out[i, j] = np.tanh(x[i, j])
    return out


@numba.njit(cache=True)
def tanh_grad(y, gy):
    rows, cols = y.shape
    out = np.empty_like(y)
    for i in range(rows):
        for j in range(cols):
            out[i, j] = gy[i, j] * (1.0 - y[i, j] * y[i, j])
    return out


@numba.njit(cache=True)
def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    flat_p = p.reshape(-1)
    flat_g = g.reshape(-1)
    flat_m = m.reshape(-1)
    flat_v = v.reshape(-1)
    for k in range(flat_p.size):
        flat_m[k] = beta1 * flat_m[k] + (1.0 - beta1) * flat_g[k]
        flat_v[k] = beta2 * flat_v[k] + (1.0 - beta2) * flat_g[k] * flat_g[k]
        m_hat = flat_m[k] / c1
        v_hat = flat_v[k] / c2
        flat_p[k] -= lr * m_hat / (np.sqrt(v_hat) + eps)
