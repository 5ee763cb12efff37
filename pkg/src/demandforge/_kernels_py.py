"""Pure numpy fallback for the hot solver kernels.

Mirrors `_kernels.pyx` semantically: same move rule, same scan order (route
ascending, -1 before +1), same strict-improvement acceptance. Each backend
is fully deterministic, but their move traces may part ways on candidates
whose deltas are mathematically tied or within one unit in the last place:
reduceat's internal reduction order differs from a plain sequential sum.
Both end at single-move local optima of the same objective.
"""
from __future__ import annotations

import numpy as np

_EPS = 1e-9


def _band_sq(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Squared distance of each value to its band [lo, hi]."""
    gap = np.where(values < lo, lo - values, np.where(values > hi, values - hi, 0.0))
    return gap * gap


def _route_sums(per_row: np.ndarray, indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Sum `per_row[indices[indptr[i]:indptr[i+1]]]` for each route i.

    reduceat runs only over the nonempty routes' start offsets: empty routes
    (including trailing ones) would otherwise shift segment boundaries.
    """
    n = len(indptr) - 1
    gathered = per_row[indices]
    sums = np.zeros(n)
    if gathered.size == 0:
        return sums
    nonempty = np.diff(indptr) > 0
    sums[nonempty] = np.add.reduceat(gathered, indptr[:-1][nonempty])
    return sums


def greedy_repair(indptr: np.ndarray, indices: np.ndarray,
                  lo: np.ndarray, hi: np.ndarray, weight: np.ndarray,
                  values: np.ndarray, usage: np.ndarray,
                  upper_bound: int, linear_cost: np.ndarray,
                  lam_temporal: float, prev_usage: np.ndarray, has_prev: int,
                  max_moves: int) -> int:
    """Best-improvement +-1 integer descent on the weighted band objective.

    `values` holds the current per-constraint-row totals and is updated in
    place along with `usage`. Candidate moves are scanned route-ascending
    with -1 tried before +1; the first strictly improving minimum is applied
    each round. Returns the number of moves applied.
    """
    n = len(usage)
    moves = 0
    while moves < max_moves:
        base = _band_sq(values, lo, hi)
        up = weight * (_band_sq(values + 1.0, lo, hi) - base)
        down = weight * (_band_sq(values - 1.0, lo, hi) - base)
        delta_plus = _route_sums(up, indptr, indices) + linear_cost
        delta_minus = _route_sums(down, indptr, indices) - linear_cost
        if has_prev and lam_temporal > 0:
            drift = usage - prev_usage
            delta_plus = delta_plus + lam_temporal * (2.0 * drift + 1.0)
            delta_minus = delta_minus + lam_temporal * (-2.0 * drift + 1.0)
        delta_plus = np.where(usage + 1 > upper_bound, np.inf, delta_plus)
        delta_minus = np.where(usage - 1 < 0, np.inf, delta_minus)

        candidates = np.empty(2 * n)
        candidates[0::2] = delta_minus
        candidates[1::2] = delta_plus
        best = int(np.argmin(candidates))
        if not candidates[best] < -_EPS:
            break
        route = best // 2
        step = -1 if best % 2 == 0 else 1
        usage[route] += step
        touched = indices[indptr[route]:indptr[route + 1]]
        values[touched] += float(step)
        moves += 1
    return moves
