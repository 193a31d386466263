"""Deterministic summation.

Every integral in the package goes through :func:`pairwise_sum`, whose
addition tree depends only on the array length, so results do not change
with the number of workers used to fill the array.
"""

import numpy as np
from numba import njit


def pairwise_sum(values):
    """Sum a flat array with a fixed binary tree (odd tails carried up)."""
    a = np.ascontiguousarray(values, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    return float(pairwise_rows(a[None, :])[0])


def pairwise_rows(values):
    """Row sums of a 2-d array, each row reduced by the same tree as :func:`pairwise_sum`."""
    a = np.ascontiguousarray(values, dtype=float)
    if a.shape[1] == 0:
        return np.zeros(a.shape[0])
    return _tree_rows(a)


@njit(cache=True)
def _tree_rows(a):
    rows, m = a.shape
    out = np.empty(rows)
    buf = np.empty(m)
    for r in range(rows):
        for i in range(m):
            buf[i] = a[r, i]
        size = m
        while size > 1:
            half = size // 2
            for i in range(half):
                buf[i] = buf[2 * i] + buf[2 * i + 1]
            if size % 2:
                buf[half] = buf[size - 1]
                size = half + 1
            else:
                size = half
        out[r] = buf[0]
    return out
