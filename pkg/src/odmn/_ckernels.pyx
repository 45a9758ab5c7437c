# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the inner loops in ``_pykernels``."""
from libc.math cimport fabs
from libc.stdint cimport int64_t


def scatter_add_rows(double[:, ::1] out, const int64_t[::1] ids, const double[:, ::1] grad):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = ids.shape[0]
    cdef Py_ssize_t d = grad.shape[1]
    cdef int64_t r
    for i in range(n):
        r = ids[i]
        for j in range(d):
            out[r, j] += grad[i, j]


def abs_area(const double[::1] x, const double[::1] d):
    cdef Py_ssize_t k
    cdef Py_ssize_t n = x.shape[0]
    cdef double a, b, dx, total = 0.0
    for k in range(n - 1):
        a = d[k]
        b = d[k + 1]
        dx = x[k + 1] - x[k]
        if (a < 0.0 and b > 0.0) or (a > 0.0 and b < 0.0):
            total += (a * a + b * b) / (2.0 * (fabs(a) + fabs(b))) * dx
        else:
            total += 0.5 * (fabs(a) + fabs(b)) * dx
    return total
