# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled Matern-5/2 ARD kernels (same interface as ``_matern_py``)."""

import numpy as np

from libc.math cimport exp, log, sqrt
from scipy.linalg.cython_lapack cimport dpotrf, dpotri, dpotrs

cdef double SQRT5 = 2.2360679774997896964
cdef double LOG_2PI = 1.8378770664093454836


cdef inline double _matern(double r2, double sf2) noexcept nogil:
    cdef double r = sqrt(r2)
    return sf2 * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * exp(-SQRT5 * r)


def cov(const double[:, ::1] X1, const double[:, ::1] X2, const double[::1] inv_ls, double sf2):
    cdef Py_ssize_t n1 = X1.shape[0], n2 = X2.shape[0], D = X1.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double r2, t
    if X2.shape[1] != D or inv_ls.shape[0] != D:
        raise ValueError("dimension mismatch")
    # pre-scaled copies keep the inner loop to a subtract and a multiply-add
    cdef double[:, ::1] A = np.multiply(X1, inv_ls)
    cdef double[:, ::1] B = np.multiply(X2, inv_ls)
    out = np.empty((n1, n2), dtype=np.float64)
    cdef double[:, ::1] K = out
    with nogil:
        for i in range(n1):
            for j in range(n2):
                r2 = 0.0
                for d in range(D):
                    t = A[i, d] - B[j, d]
                    r2 = r2 + t * t
                K[i, j] = _matern(r2, sf2)
    return out


def cov_sym(const double[:, ::1] X, const double[::1] inv_ls, double sf2):
    cdef Py_ssize_t n = X.shape[0], D = X.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double r2, t, k
    if inv_ls.shape[0] != D:
        raise ValueError("dimension mismatch")
    cdef double[:, ::1] A = np.multiply(X, inv_ls)
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] K = out
    with nogil:
        for i in range(n):
            K[i, i] = sf2
            for j in range(i + 1, n):
                r2 = 0.0
                for d in range(D):
                    t = A[i, d] - A[j, d]
                    r2 = r2 + t * t
                k = _matern(r2, sf2)
                K[i, j] = k
                K[j, i] = k
    return out


def lengthscale_grad(const double[:, ::1] X, const double[::1] inv_ls, double sf2,
                     const double[:, ::1] W):
    """``sum_ij W_ij dK_ij / d log l_d`` for every input dimension ``d``."""
    cdef Py_ssize_t n = X.shape[0], D = X.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double r2, r, t, w
    if inv_ls.shape[0] != D or W.shape[0] != n or W.shape[1] != n:
        raise ValueError("dimension mismatch")
    out = np.zeros(D, dtype=np.float64)
    cdef double[::1] g = out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                r2 = 0.0
                for d in range(D):
                    t = (X[i, d] - X[j, d]) * inv_ls[d]
                    r2 = r2 + t * t
                r = sqrt(r2)
                w = (W[i, j] + W[j, i]) * sf2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * exp(-SQRT5 * r)
                for d in range(D):
                    t = (X[i, d] - X[j, d]) * inv_ls[d]
                    g[d] = g[d] + w * t * t
    return out


def lml_grad(const double[:, ::1] X, const double[::1] y, const double[::1] theta,
             double jitter_start, double jitter_max):
    """Log marginal likelihood and its gradient w.r.t. log hyperparameters.

    ``theta = [log l_1..log l_D, log sf2, log sn2]``. Diagonal jitter starts at
    ``jitter_start * sf2`` and grows tenfold up to ``jitter_max * sf2``.
    """
    cdef Py_ssize_t n = X.shape[0], D = X.shape[1]
    cdef Py_ssize_t i, j, d
    cdef int N = <int>n, one = 1, info = 0
    cdef char uplo = b'L'
    cdef double r2, r, t, e, w, sf2, sn2, jitter, lml, quad
    if theta.shape[0] != D + 2 or y.shape[0] != n:
        raise ValueError("dimension mismatch")

    inv_ls_arr = np.exp(-np.asarray(theta[:D]))
    cdef double[::1] inv_ls = inv_ls_arr
    sf2 = exp(theta[D])
    sn2 = exp(theta[D + 1])

    K_arr = np.empty((n, n), dtype=np.float64, order="F")
    P_arr = np.empty((n, n), dtype=np.float64, order="F")
    A_arr = np.empty((n, n), dtype=np.float64, order="F")
    alpha_arr = np.empty(n, dtype=np.float64)
    grad_arr = np.zeros(D + 2, dtype=np.float64)
    cdef double[::1, :] K = K_arr
    cdef double[::1, :] P = P_arr
    cdef double[::1, :] A = A_arr
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] g = grad_arr

    with nogil:
        for j in range(n):
            K[j, j] = sf2
            P[j, j] = 0.0
            for i in range(j + 1, n):
                r2 = 0.0
                for d in range(D):
                    t = (X[i, d] - X[j, d]) * inv_ls[d]
                    r2 = r2 + t * t
                r = sqrt(r2)
                e = exp(-SQRT5 * r)
                K[i, j] = sf2 * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * e
                P[i, j] = sf2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e

    jitter = jitter_start * sf2
    while True:
        with nogil:
            for j in range(n):
                for i in range(j, n):
                    A[i, j] = K[i, j]
                A[j, j] = A[j, j] + sn2 + jitter
            dpotrf(&uplo, &N, &A[0, 0], &N, &info)
        if info == 0:
            break
        jitter = jitter * 10.0
        if jitter > jitter_max * sf2 * (1.0 + 1e-9):
            raise np.linalg.LinAlgError("Cholesky failed at maximum jitter")

    with nogil:
        for i in range(n):
            alpha[i] = y[i]
        dpotrs(&uplo, &N, &one, &A[0, 0], &N, &alpha[0], &N, &info)
    if info != 0:
        raise np.linalg.LinAlgError("triangular solve failed")

    quad = 0.0
    lml = 0.0
    for i in range(n):
        quad = quad + y[i] * alpha[i]
        lml = lml - log(A[i, i])
    lml = lml - 0.5 * quad - 0.5 * n * LOG_2PI

    with nogil:
        dpotri(&uplo, &N, &A[0, 0], &N, &info)
    if info != 0:
        raise np.linalg.LinAlgError("inverse from Cholesky failed")

    with nogil:
        for j in range(n):
            # diagonal of W = alpha alpha^T - K^-1
            w = alpha[j] * alpha[j] - A[j, j]
            g[D] = g[D] + 0.5 * w * sf2
            g[D + 1] = g[D + 1] + 0.5 * w * sn2
            for i in range(j + 1, n):
                # W_ij + W_ji from the lower triangle
                w = 2.0 * (alpha[i] * alpha[j] - A[i, j])
                g[D] = g[D] + 0.5 * w * K[i, j]
                w = 0.5 * w * P[i, j]
                for d in range(D):
                    t = (X[i, d] - X[j, d]) * inv_ls[d]
                    g[d] = g[d] + w * t * t
    return lml, grad_arr
