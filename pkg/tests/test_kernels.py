"""Both kernel backends must compute the same functions."""

import numpy as np
import pytest

import oracles
from pitrack import kernels_numba as kb
from pitrack import kernels_numpy as kn


@pytest.mark.parametrize("shape", [(1, 1), (3, 7), (10, 15), (40, 20)])
def test_softmax_backends_agree(shape, rng):
    x = rng.standard_normal(shape) * 8
    a, b = kn.softmax_rows(x), kb.softmax_rows(x)
    assert np.abs(a - b).max() < 1e-14
    gy = rng.standard_normal(shape)
    ga, gb = kn.softmax_rows_grad(a, gy), kb.softmax_rows_grad(b, gy)
    assert np.abs(ga - gb).max() < 1e-14


def test_pointwise_backends_agree(rng):
    x = rng.standard_normal((6, 9)) * 4
    gy = rng.standard_normal((6, 9))
    assert np.abs(kn.sigmoid(x) - kb.sigmoid(x)).max() < 1e-15
    assert np.abs(kn.tanh(x) - kb.tanh(x)).max() < 1e-15
    y = kn.sigmoid(x)
    assert np.abs(kn.sigmoid_grad(y, gy) - kb.sigmoid_grad(y, gy)).max() < 1e-15
    z = kn.tanh(x)
    assert np.abs(kn.tanh_grad(z, gy) - kb.tanh_grad(z, gy)).max() < 1e-15


def test_adam_backends_agree(rng):
    p1 = rng.standard_normal((5, 4))
    p2 = p1.copy()
    m1 = np.zeros_like(p1)
    v1 = np.zeros_like(p1)
    m2 = np.zeros_like(p1)
    v2 = np.zeros_like(p1)
    for step in range(1, 6):
        g = rng.standard_normal((5, 4))
        kn.adam_update(p1, g, m1, v1, 1e-2, 0.9, 0.999, 1e-8, step)
        kb.adam_update(p2, g, m2, v2, 1e-2, 0.9, 0.999, 1e-8, step)
    assert np.abs(p1 - p2).max() < 1e-14


def test_lap_backends_identical(rng):
    for _ in range(100):
        nr = int(rng.integers(1, 7))
        nc = int(rng.integers(nr, 9))
        cost = rng.random((nr, nc)) * 10
        assert np.array_equal(kn.lap_solve(cost), kb.lap_solve(cost))


def test_lap_matches_brute_force(rng):
    for _ in range(200):
        nr = int(rng.integers(1, 6))
        nc = int(rng.integers(nr, 7))
        cost = rng.random((nr, nc)) * 10
        got = kb.lap_solve(cost)
        total = cost[np.arange(nr), got].sum()
        _, want = oracles.brute_force_assignment(cost.T.tolist())
        assert len(set(got.tolist())) == nr
        assert abs(total - want) < 1e-9


def test_softmax_matches_scalar_loops(rng):
    x = rng.standard_normal((4, 6)) * 3
    want = np.array([oracles.softmax_row_loops(row) for row in x.tolist()])
    assert np.abs(kb.softmax_rows(x) - want).max() < 1e-14
    assert np.abs(kn.softmax_rows(x) - want).max() < 1e-14


def test_float32_supported(rng):
    x = rng.standard_normal((4, 5)).astype(np.float32)
    assert kb.softmax_rows(x).dtype == np.float32
    assert kn.sigmoid(x).dtype == np.float32
