"""Kernel backend selection.

The env var PITRACK_NUMBA picks the implementation of the hot kernels:

    PITRACK_NUMBA=1   force the numba path (import error if numba missing)
    PITRACK_NUMBA=0   force the pure numpy fallback
    unset             numba when importable, numpy otherwise

Selection happens once at import. Both backends compute the same functions;
results agree to float64 roundoff (summation order differs), so bitwise
reproducibility guarantees hold per backend, not across backends.
"""

import os

_FALSY = {"0", "false", "no", "off"}
_TRUTHY = {"1", "true", "yes", "on"}


def _pick():
    raw = os.environ.get("PITRACK_NUMBA", "").strip().lower()
    if raw in _FALSY:
        return "numpy"
    if raw in _TRUTHY:
        return "numba"
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


BACKEND = _pick()

if BACKEND == "numba":
    from . import kernels_numba as _k
else:
    from . import kernels_numpy as _k

lap_solve = _k.lap_solve
softmax_rows = _k.softmax_rows
softmax_rows_grad = _k.softmax_rows_grad
sigmoid = _k.sigmoid
sigmoid_grad = _k.sigmoid_grad
tanh = _k.tanh
tanh_grad = _k.tanh_grad
adam_update = _k.adam_update


def backend_name():
    return BACKEND
