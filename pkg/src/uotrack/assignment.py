"""Rectangular minimum-cost assignment with forbidden pairs.

``hungarian`` returns a maximum-cardinality matching over the allowed pairs
and, among those, one with minimum total cost. Forbidden pairs are given by
a boolean mask, a ``numpy.ma`` mask, or non-finite entries.
"""

from __future__ import annotations

import numpy as np


def _solve_rows_le_cols(cost: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path Hungarian method for ``n <= m``; returns column per row."""
    n, m = cost.shape
    # 1-indexed potentials; column 0 is the virtual source
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)
    way = np.zeros(m + 1, dtype=int)
    padded = np.zeros((n + 1, m + 1))
    padded[1:, 1:] = cost
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            candidates = np.where(free, minv, np.inf)
            j1 = int(np.argmin(candidates))
            delta = candidates[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=int)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row


def hungarian(cost: np.ndarray, allowed: np.ndarray | None = None) -> list[tuple[int, int]]:
    """Optimal partial one-to-one matching; returns sorted ``(row, col)`` pairs."""
    if isinstance(cost, np.ma.MaskedArray):
        mask = np.ma.getmaskarray(cost)
        cost = np.ma.getdata(cost)
        allowed = ~mask if allowed is None else allowed & ~mask
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    ok = np.isfinite(cost)
    if allowed is not None:
        ok &= np.asarray(allowed, dtype=bool)
    if cost.size == 0 or not ok.any():
        return []
    transposed = cost.shape[0] > cost.shape[1]
    if transposed:
        cost, ok = cost.T, ok.T
    lo, hi = cost[ok].min(), cost[ok].max()
    # any extra allowed pair must beat every possible cost difference among allowed pairs
    big = cost.shape[0] * (hi - lo) + 1.0
    work = np.where(ok, cost - lo, big)
    cols = _solve_rows_le_cols(work)
    pairs = [(r, int(c)) for r, c in enumerate(cols) if c >= 0 and ok[r, c]]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


def assignment_cost(cost: np.ndarray, pairs: list[tuple[int, int]]) -> float:
    cost = np.ma.getdata(cost)
    return float(sum(cost[r, c] for r, c in pairs))
