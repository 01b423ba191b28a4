"""Rectangular linear assignment by shortest augmenting paths.

Single implementation shared by both kernel backends; the numba backend
jit-compiles it, the numpy backend runs it as-is. Written with plain loops
and preallocated arrays so it compiles in nopython mode.
"""

import numpy as np


def lap_solve_impl(cost):
    """Minimum-cost assignment of every row of `cost` to a distinct column.

    `cost` must be (n_rows, n_cols) with n_rows <= n_cols and finite entries.
    Returns col4row, an int64 array where col4row[i] is the column matched to
    row i. Deterministic for a given cost matrix (fixed scan order).
    """
    nr, nc = cost.shape
    u = np.zeros(nr, dtype=np.float64)
    v = np.zeros(nc, dtype=np.float64)
    col4row = np.full(nr, -1, dtype=np.int64)
    row4col = np.full(nc, -1, dtype=np.int64)
    shortest = np.empty(nc, dtype=np.float64)
    path = np.empty(nc, dtype=np.int64)
    on_row = np.empty(nr, dtype=np.bool_)
    on_col = np.empty(nc, dtype=np.bool_)

    for cur_row in range(nr):
        shortest[:] = np.inf
        path[:] = -1
        on_row[:] = False
        on_col[:] = False
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            on_row[i] = True
            lowest = np.inf
            index = -1
            for j in range(nc):
                if on_col[j]:
                    continue
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    shortest[j] = r
                    path[j] = i
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = j
            min_val = lowest
            j = index
            on_col[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]

        u[cur_row] += min_val
        for ip in range(nr):
            if on_row[ip] and ip != cur_row:
                u[ip] += min_val - shortest[col4row[ip]]
        for jp in range(nc):
            if on_col[jp]:
                v[jp] -= min_val - shortest[jp]

        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            nxt = col4row[i]
            col4row[i] = j
            if i == cur_row:
                break
            j = nxt

    return col4row
