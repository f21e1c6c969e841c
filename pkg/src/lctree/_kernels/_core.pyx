# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the T4 distance kernels in ``_pure``.

Same semantics as the pure NumPy versions; the unfolding candidate
tables are built once in ``_pure`` and passed in as flat arrays.
"""

import numpy as np

from libc.math cimport hypot


cdef inline double _t4_one(int a, double pu, double pv, int b,
                           double qu, double qv,
                           const long long[::1] cand_start,
                           const long long[::1] cand_count,
                           const signed char[::1] p_swap,
                           const signed char[::1] kk,
                           const double[:, :, ::1] q_cols,
                           const double[:, :, ::1] cross_u) nogil:
    cdef double best, pe0, pe1, qe0, qe1, sp, sq, den, t, r, ux, uy, length
    cdef long long c, lo, hi
    cdef int m, valid
    if a < 0:
        return hypot(qu, qv)
    if a == b:
        return hypot(qu - pu, qv - pv)
    best = hypot(pu, pv) + hypot(qu, qv)
    lo = cand_start[a * 15 + b]
    hi = lo + cand_count[a * 15 + b]
    for c in range(lo, hi):
        if p_swap[c]:
            pe0 = pv
            pe1 = pu
        else:
            pe0 = pu
            pe1 = pv
        qe0 = qu * q_cols[c, 0, 0] + qv * q_cols[c, 1, 0]
        qe1 = qu * q_cols[c, 0, 1] + qv * q_cols[c, 1, 1]
        valid = 1
        for m in range(kk[c]):
            ux = cross_u[c, m, 0]
            uy = cross_u[c, m, 1]
            sp = ux * pe1 - uy * pe0
            sq = ux * qe1 - uy * qe0
            if sp > 1e-12 or sq < -1e-12:
                valid = 0
                break
            den = sp - sq
            if den >= -1e-300:
                valid = 0
                break
            t = sp / den
            r = ux * (pe0 + t * (qe0 - pe0)) + uy * (pe1 + t * (qe1 - pe1))
            if r < -1e-12:
                valid = 0
                break
        if valid:
            length = hypot(qe0 - pe0, qe1 - pe1)
            if length < best:
                best = length
    return best


def t4_point_to_group(int a, double pu, double pv, int b,
                      double[::1] us, double[::1] vs,
                      const long long[::1] cand_start,
                      const long long[::1] cand_count,
                      const signed char[::1] p_swap,
                      const signed char[::1] kk,
                      const double[:, :, ::1] q_cols,
                      const double[:, :, ::1] cross_u):
    """Distances from one T4 point to many points of one orthant."""
    cdef Py_ssize_t j, n = us.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for j in range(n):
            out[j] = _t4_one(a, pu, pv, b, us[j], vs[j], cand_start,
                             cand_count, p_swap, kk, q_cols, cross_u)
    return out_arr


def t4_point_to_points(int a, double pu, double pv,
                       const long long[::1] idx,
                       double[::1] us, double[::1] vs,
                       const long long[::1] cand_start,
                       const long long[::1] cand_count,
                       const signed char[::1] p_swap,
                       const signed char[::1] kk,
                       const double[:, :, ::1] q_cols,
                       const double[:, :, ::1] cross_u):
    """Distances from one T4 point to a packed point array."""
    cdef Py_ssize_t j, n = idx.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for j in range(n):
            out[j] = _t4_one(a, pu, pv, <int> idx[j], us[j], vs[j],
                             cand_start, cand_count, p_swap, kk,
                             q_cols, cross_u)
    return out_arr
