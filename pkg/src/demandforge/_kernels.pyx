# cython: boundscheck=False, wraparound=False, cdivision=True
"""Native solver kernels.

Semantics match `_kernels_py`: same scan order (route ascending, -1 before
+1), first strictly improving minimum applied each round. Move traces may
differ from the fallback's at float-tie granularity (see its module note);
results are equally valid local optima of the same objective.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double _EPS = 1e-9


cdef inline double _band_sq(double v, double lo, double hi) nogil:
    cdef double gap
    if v < lo:
        gap = lo - v
    elif v > hi:
        gap = v - hi
    else:
        return 0.0
    return gap * gap


def greedy_repair(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
                  double[::1] lo, double[::1] hi, double[::1] weight,
                  double[::1] values, cnp.int64_t[::1] usage,
                  long long upper_bound, double[::1] linear_cost,
                  double lam_temporal, cnp.int64_t[::1] prev_usage,
                  int has_prev, long long max_moves):
    """Best-improvement +-1 integer descent; see the numpy twin for the
    contract. Updates `values` and `usage` in place, returns move count."""
    cdef Py_ssize_t n = usage.shape[0]
    cdef long long moves = 0
    cdef Py_ssize_t i, k, best_route
    cdef cnp.int64_t kk
    cdef int d, best_dir
    cdef double acc, v, delta, best_delta, drift

    while moves < max_moves:
        best_delta = np.inf
        best_route = -1
        best_dir = 0
        for i in range(n):
            for d in range(-1, 2, 2):
                if d < 0 and usage[i] - 1 < 0:
                    continue
                if d > 0 and usage[i] + 1 > upper_bound:
                    continue
                acc = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    kk = indices[k]
                    v = values[kk]
                    acc = acc + weight[kk] * (_band_sq(v + d, lo[kk], hi[kk])
                                              - _band_sq(v, lo[kk], hi[kk]))
                if d > 0:
                    delta = acc + linear_cost[i]
                else:
                    delta = acc - linear_cost[i]
                if has_prev and lam_temporal > 0:
                    drift = <double> (usage[i] - prev_usage[i])
                    delta = delta + lam_temporal * (2.0 * d * drift + 1.0)
                if delta < best_delta:
                    best_delta = delta
                    best_route = i
                    best_dir = d
        if best_route < 0 or not best_delta < -_EPS:
            break
        usage[best_route] += best_dir
        for k in range(indptr[best_route], indptr[best_route + 1]):
            values[indices[k]] += <double> best_dir
        moves += 1
    return moves
