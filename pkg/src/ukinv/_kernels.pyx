# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the batched tridiagonal forward solves.

Mirrors ``_kernels_py`` operation for operation.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def tridiag_solve_batch(lower, diag, upper, rhs):
    cdef const double[:, ::1] lo = np.ascontiguousarray(lower, dtype=np.float64)
    cdef const double[:, ::1] di = np.ascontiguousarray(diag, dtype=np.float64)
    cdef const double[:, ::1] up = np.ascontiguousarray(upper, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t k = di.shape[0], n = di.shape[1]
    out = np.empty((k, n), dtype=np.float64)
    cdef double[:, ::1] x = out
    cdef double[::1] cp = np.empty(n, dtype=np.float64)
    cdef double[::1] dp = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t s, i
    cdef double denom
    with nogil:
        for s in range(k):
            cp[0] = up[s, 0] / di[s, 0]
            dp[0] = b[s, 0] / di[s, 0]
            for i in range(1, n):
                denom = di[s, i] - lo[s, i] * cp[i - 1]
                cp[i] = up[s, i] / denom
                dp[i] = (b[s, i] - lo[s, i] * dp[i - 1]) / denom
            x[s, n - 1] = dp[n - 1]
            for i in range(n - 2, -1, -1):
                x[s, i] = dp[i] - cp[i] * x[s, i + 1]
    return out


def diffusion_system(face_coef, h):
    cdef const double[:, ::1] a = np.ascontiguousarray(face_coef, dtype=np.float64)
    cdef Py_ssize_t k = a.shape[0], n = a.shape[1] - 1
    cdef double inv_h2 = 1.0 / (h * h)
    lower = np.empty((k, n), dtype=np.float64)
    diag = np.empty((k, n), dtype=np.float64)
    upper = np.empty((k, n), dtype=np.float64)
    cdef double[:, ::1] lo = lower
    cdef double[:, ::1] di = diag
    cdef double[:, ::1] up = upper
    cdef Py_ssize_t s, i
    with nogil:
        for s in range(k):
            for i in range(n):
                lo[s, i] = -a[s, i] * inv_h2
                up[s, i] = -a[s, i + 1] * inv_h2
                di[s, i] = (a[s, i] + a[s, i + 1]) * inv_h2
    return lower, diag, upper
