# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MNL evaluation kernel.

Fuses utility, softmax, log likelihood and gradient accumulation into one
pass over the batch. For the Hessian, weighted centred design rows
sqrt(P_j) (x_j - xbar) are staged in a buffer and folded into the
accumulator with BLAS dsyrk.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, isfinite, INFINITY
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dsyrk

cnp.import_array()

NAME = "compiled"

cdef enum:
    OBS_PER_FLUSH = 64


cdef Py_ssize_t _run(const double[::1] theta,
                     const double[:, ::1] data,
                     const cnp.int64_t[::1] choices,
                     const cnp.uint8_t[:, ::1] avail,
                     const cnp.int64_t[::1] tpar,
                     const cnp.int64_t[::1] talt,
                     const cnp.int64_t[::1] tcol,
                     const cnp.int64_t[::1] indices,
                     int level,
                     double* value_out,
                     double[::1] grad,
                     double[:, ::1] hacc) noexcept nogil:
    cdef Py_ssize_t K = theta.shape[0]
    cdef Py_ssize_t J = avail.shape[1]
    cdef Py_ssize_t T = tpar.shape[0]
    cdef Py_ssize_t B = indices.shape[0]
    cdef Py_ssize_t b, n, t, j, k, c, i, staged = 0
    cdef double vmax, s, value = 0.0, w, pj
    cdef double *z = <double*> malloc(T * sizeof(double))
    cdef double *V = <double*> malloc(J * sizeof(double))
    cdef double *P = <double*> malloc(J * sizeof(double))
    cdef double *xbar = NULL
    cdef double *W = NULL
    cdef double *row
    cdef char uplo = b'U'
    cdef char trans = b'N'
    cdef int fK = <int> K, fm, lda = <int> K
    cdef double one = 1.0
    cdef Py_ssize_t bad = -1
    if level >= 2:
        xbar = <double*> malloc(K * sizeof(double))
        W = <double*> malloc(OBS_PER_FLUSH * J * K * sizeof(double))

    for b in range(B):
        n = indices[b]
        for j in range(J):
            V[j] = 0.0
        for t in range(T):
            c = tcol[t]
            z[t] = 1.0 if c < 0 else data[n, c]
            V[talt[t]] += theta[tpar[t]] * z[t]
        vmax = -INFINITY
        for j in range(J):
            if not isfinite(V[j]):
                bad = n
                break
            if avail[n, j] and V[j] > vmax:
                vmax = V[j]
        if bad >= 0:
            break
        s = 0.0
        for j in range(J):
            if avail[n, j]:
                P[j] = exp(V[j] - vmax)
                s += P[j]
            else:
                P[j] = 0.0
        for j in range(J):
            P[j] = P[j] / s
        i = choices[n]
        if P[i] == 0.0:
            bad = n
            break
        value += V[i] - vmax - log(s)
        if level < 1:
            continue
        for t in range(T):
            j = talt[t]
            grad[tpar[t]] += ((1.0 if j == i else 0.0) - P[j]) * z[t]
        if level < 2:
            continue
        for k in range(K):
            xbar[k] = 0.0
        for t in range(T):
            xbar[tpar[t]] += P[talt[t]] * z[t]
        for j in range(J):
            pj = P[j]
            if pj <= 0.0:
                continue
            w = sqrt(pj)
            row = W + staged * K
            for k in range(K):
                row[k] = -w * xbar[k]
            for t in range(T):
                if talt[t] == j:
                    row[tpar[t]] += w * z[t]
            staged += 1
        if staged > (OBS_PER_FLUSH - 1) * J:
            fm = <int> staged
            # Fortran view of the row-major buffer is K x staged: C += A A^T
            dsyrk(&uplo, &trans, &fK, &fm, &one, W, &lda, &one, &hacc[0, 0], &fK)
            staged = 0
    if bad < 0 and level >= 2 and staged > 0:
        fm = <int> staged
        dsyrk(&uplo, &trans, &fK, &fm, &one, W, &lda, &one, &hacc[0, 0], &fK)
    value_out[0] = value
    free(z)
    free(V)
    free(P)
    if xbar != NULL:
        free(xbar)
    if W != NULL:
        free(W)
    return bad


def evaluate(const double[::1] theta, const double[:, ::1] data,
             const cnp.int64_t[::1] choices, const cnp.uint8_t[:, ::1] avail,
             const cnp.int64_t[::1] term_param, const cnp.int64_t[::1] term_alt,
             const cnp.int64_t[::1] term_col, const cnp.int64_t[::1] indices, int level):
    """Return ``(value, gradient, hessian, bad_row)``; see ``_pycore.evaluate``."""
    cdef Py_ssize_t K = theta.shape[0]
    cdef double value = 0.0
    cdef Py_ssize_t bad
    grad = np.zeros(K)
    hacc = np.zeros((K, K))
    cdef double[::1] g = grad
    cdef double[:, ::1] h = hacc
    with nogil:
        bad = _run(theta, data, choices, avail, term_param, term_alt, term_col,
                   indices, level, &value, g, h)
    if bad >= 0:
        return 0.0, None, None, bad
    if level < 1:
        return value, None, None, -1
    if level < 2:
        return value, grad, None, -1
    # dsyrk filled the Fortran upper triangle, i.e. the C lower triangle
    lower = np.tril(hacc)
    hess = -(lower + np.tril(hacc, -1).T)
    return value, grad, hess, -1
