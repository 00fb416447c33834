# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled scattered-point evaluation kernels (see reference.py for the contract)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt

IMPL = "compiled"

cdef double TWO_PI = 6.283185307179586476925286766559


cdef inline Py_ssize_t _bisect(const double* nodes, Py_ssize_t m, double t) nogil:
    # rightmost interval index j with nodes[j] <= t, clipped to [0, m-2]
    cdef Py_ssize_t lo = 0, hi = m, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if nodes[mid] <= t:
            lo = mid + 1
        else:
            hi = mid
    lo -= 1
    if lo < 0:
        lo = 0
    if lo > m - 2:
        lo = m - 2
    return lo


cdef inline void _lagrange4(const double* nodes, Py_ssize_t m, double t,
                            Py_ssize_t* start, double* w) nogil:
    cdef Py_ssize_t j = _bisect(nodes, m, t)
    cdef Py_ssize_t s = j - 1
    if s < 0:
        s = 0
    if s > m - 4:
        s = m - 4
    start[0] = s
    cdef double t0 = nodes[s], t1 = nodes[s + 1], t2 = nodes[s + 2], t3 = nodes[s + 3]
    w[0] = (t - t1) * (t - t2) * (t - t3) / ((t0 - t1) * (t0 - t2) * (t0 - t3))
    w[1] = (t - t0) * (t - t2) * (t - t3) / ((t1 - t0) * (t1 - t2) * (t1 - t3))
    w[2] = (t - t0) * (t - t1) * (t - t3) / ((t2 - t0) * (t2 - t1) * (t2 - t3))
    w[3] = (t - t0) * (t - t1) * (t - t2) / ((t3 - t0) * (t3 - t1) * (t3 - t2))


def interp_coeffs(cnp.ndarray[cnp.float64_t, ndim=1] nodes,
                  cnp.ndarray[cnp.float64_t, ndim=2] snapshots,
                  object tq):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t = np.ascontiguousarray(tq, dtype=np.float64)
    cdef Py_ssize_t nq = t.shape[0], nm = snapshots.shape[1], m = nodes.shape[0]
    if m < 4:
        raise ValueError("need at least 4 time nodes for cubic interpolation")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((nq, nm))
    cdef Py_ssize_t q, a, mm, s
    cdef double w[4]
    cdef const double* nd = &nodes[0]
    with nogil:
        for q in range(nq):
            _lagrange4(nd, m, t[q], &s, w)
            for mm in range(nm):
                out[q, mm] = (w[0] * snapshots[s, mm] + w[1] * snapshots[s + 1, mm]
                              + w[2] * snapshots[s + 2, mm] + w[3] * snapshots[s + 3, mm])
    return out


def eval_scalar(cnp.ndarray[cnp.float64_t, ndim=1] nodes,
                cnp.ndarray[cnp.float64_t, ndim=2] snapshots,
                cnp.ndarray[cnp.int64_t, ndim=2] kvecs,
                cnp.ndarray[cnp.int8_t, ndim=1] kind,
                object tq, object xq):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t = np.ascontiguousarray(tq, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(
        np.atleast_2d(xq), dtype=np.float64)
    cdef Py_ssize_t nq = t.shape[0], nm = snapshots.shape[1], m = nodes.shape[0]
    cdef Py_ssize_t d = kvecs.shape[1]
    if m < 4:
        raise ValueError("need at least 4 time nodes for cubic interpolation")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(nq)
    cdef Py_ssize_t q, mm, s, a
    cdef double w[4]
    cdef double phase, c, acc, sqrt2 = sqrt(2.0)
    cdef const double* nd = &nodes[0]
    with nogil:
        for q in range(nq):
            _lagrange4(nd, m, t[q], &s, w)
            acc = 0.0
            for mm in range(nm):
                c = (w[0] * snapshots[s, mm] + w[1] * snapshots[s + 1, mm]
                     + w[2] * snapshots[s + 2, mm] + w[3] * snapshots[s + 3, mm])
                if kind[mm] == 0:
                    acc += c
                else:
                    phase = TWO_PI * kvecs[mm, 0] * x[q, 0]
                    if d == 2:
                        phase += TWO_PI * kvecs[mm, 1] * x[q, 1]
                    if kind[mm] == 1:
                        acc += c * sqrt2 * cos(phase)
                    else:
                        acc += c * sqrt2 * sin(phase)
            out[q] = acc
    return out


def eval_vector(cnp.ndarray[cnp.float64_t, ndim=1] nodes,
                cnp.ndarray[cnp.float64_t, ndim=2] snapshots,
                cnp.ndarray[cnp.int64_t, ndim=2] kvecs,
                cnp.ndarray[cnp.int8_t, ndim=1] kind,
                cnp.ndarray[cnp.float64_t, ndim=2] dirs,
                object tq, object xq):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t = np.ascontiguousarray(tq, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(
        np.atleast_2d(xq), dtype=np.float64)
    cdef Py_ssize_t nq = t.shape[0], nm = snapshots.shape[1], m = nodes.shape[0]
    if m < 4:
        raise ValueError("need at least 4 time nodes for cubic interpolation")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((nq, 2))
    cdef Py_ssize_t q, mm, s
    cdef double w[4]
    cdef double phase, c, b, acc0, acc1, sqrt2 = sqrt(2.0)
    cdef const double* nd = &nodes[0]
    with nogil:
        for q in range(nq):
            _lagrange4(nd, m, t[q], &s, w)
            acc0 = 0.0
            acc1 = 0.0
            for mm in range(nm):
                c = (w[0] * snapshots[s, mm] + w[1] * snapshots[s + 1, mm]
                     + w[2] * snapshots[s + 2, mm] + w[3] * snapshots[s + 3, mm])
                phase = TWO_PI * (kvecs[mm, 0] * x[q, 0] + kvecs[mm, 1] * x[q, 1])
                if kind[mm] == 1:
                    b = sqrt2 * cos(phase)
                else:
                    b = sqrt2 * sin(phase)
                acc0 += c * b * dirs[mm, 0]
                acc1 += c * b * dirs[mm, 1]
            out[q, 0] = acc0
            out[q, 1] = acc1
    return out
