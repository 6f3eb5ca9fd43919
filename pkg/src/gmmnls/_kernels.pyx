# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mixture kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


cdef double _lse(const double[::1] v) noexcept nogil:
    cdef Py_ssize_t k, K = v.shape[0]
    cdef double m = v[0], s = 0.0
    for k in range(1, K):
        if v[k] > m:
            m = v[k]
    for k in range(K):
        s += exp(v[k] - m)
    return m + log(s)


cdef void _half_norms(const double[:, ::1] E, double[::1] f) noexcept nogil:
    cdef Py_ssize_t k, i
    cdef double acc
    for k in range(E.shape[0]):
        acc = 0.0
        for i in range(E.shape[1]):
            acc += E[k, i] * E[k, i]
        f[k] = 0.5 * acc


cdef double _softmin(const double[::1] log_alpha, const double[::1] f, double[::1] w) noexcept nogil:
    """Fill ``w`` with the normalized weights and return log sum alpha exp(-f)."""
    cdef Py_ssize_t k, K = f.shape[0]
    cdef double m = log_alpha[0] - f[0], s = 0.0, z
    for k in range(1, K):
        z = log_alpha[k] - f[k]
        if z > m:
            m = z
    for k in range(K):
        w[k] = exp(log_alpha[k] - f[k] - m)
        s += w[k]
    for k in range(K):
        w[k] /= s
    return m + log(s)


cdef Py_ssize_t _dominant(const double[::1] log_alpha, const double[::1] f) noexcept nogil:
    cdef Py_ssize_t k, best = 0
    cdef double bv = log_alpha[0] - f[0], z
    for k in range(1, f.shape[0]):
        z = log_alpha[k] - f[k]
        if z > bv:
            bv = z
            best = k
    return best


cdef void _weighted_gradient(const double[::1] w, const double[:, ::1] E,
                             const double[:, :, ::1] Jc, double[::1] g) noexcept nogil:
    cdef Py_ssize_t k, i, j
    cdef Py_ssize_t K = Jc.shape[0], m = Jc.shape[1], n = Jc.shape[2]
    for j in range(n):
        g[j] = 0.0
    for k in range(K):
        for i in range(m):
            for j in range(n):
                g[j] += w[k] * E[k, i] * Jc[k, i, j]


def whiten(const double[:, :, ::1] L, const double[:, ::1] r, const double[:, :, ::1] Jraw):
    cdef Py_ssize_t K = L.shape[0], m = L.shape[1], n = Jraw.shape[2]
    cdef Py_ssize_t k, i, j, p
    E_arr = np.zeros((K, m))
    J_arr = np.zeros((K, m, n))
    cdef double[:, ::1] E = E_arr
    cdef double[:, :, ::1] Jc = J_arr
    with nogil:
        for k in range(K):
            for i in range(m):
                for j in range(m):
                    E[k, i] += L[k, i, j] * r[k, j]
                    for p in range(n):
                        Jc[k, i, p] += L[k, i, j] * Jraw[k, j, p]
    return E_arr, J_arr


def softmin(const double[::1] log_alpha, const double[::1] f):
    w_arr = np.empty(f.shape[0])
    cdef double[::1] w = w_arr
    cdef double lse = _softmin(log_alpha, f, w)
    return w_arr, lse


def hsm_constant(const double[::1] log_alpha):
    cdef Py_ssize_t k, K = log_alpha.shape[0]
    cdef double s = _lse(log_alpha)
    t_arr = np.empty(K)
    cdef double[::1] t = t_arr
    for k in range(K):
        t[k] = log_alpha[k] + exp(s - log_alpha[k])
    return _lse(t)


def max_mixture(const double[::1] log_alpha, const double[:, ::1] E, const double[:, :, ::1] Jc):
    cdef Py_ssize_t K = Jc.shape[0], m = Jc.shape[1], n = Jc.shape[2]
    cdef Py_ssize_t k, i, j
    f_arr = np.empty(K)
    cdef double[::1] f = f_arr
    _half_norms(E, f)
    k = _dominant(log_alpha, f)
    cdef double amax = log_alpha[0]
    for i in range(1, K):
        if log_alpha[i] > amax:
            amax = log_alpha[i]
    err_arr = np.empty(m + 1)
    jac_arr = np.zeros((m + 1, n))
    cdef double[::1] err = err_arr
    cdef double[:, ::1] jac = jac_arr
    err[0] = sqrt(max(2.0 * (amax - log_alpha[k]), 0.0))
    for i in range(m):
        err[i + 1] = E[k, i]
        for j in range(n):
            jac[i + 1, j] = Jc[k, i, j]
    return err_arr, jac_arr, int(k)


def sum_mixture(const double[::1] log_alpha, const double[:, ::1] E, const double[:, :, ::1] Jc):
    cdef Py_ssize_t K = Jc.shape[0], n = Jc.shape[2]
    cdef Py_ssize_t j
    f_arr = np.empty(K)
    w_arr = np.empty(K)
    g_arr = np.empty(n)
    cdef double[::1] f = f_arr, w = w_arr, g = g_arr
    _half_norms(E, f)
    cdef double lse = _softmin(log_alpha, f, w)
    cdef double arg = 2.0 * (_lse(log_alpha) - lse)
    cdef double e = sqrt(max(arg, 0.0))
    _weighted_gradient(w, E, Jc, g)
    jac_arr = np.zeros((1, n))
    cdef double[:, ::1] jac = jac_arr
    if e > 0.0:
        for j in range(n):
            jac[0, j] = g[j] / e
    return np.array([e]), jac_arr, arg


def max_sum_mixture(const double[::1] log_alpha, const double[:, ::1] E,
                    const double[:, :, ::1] Jc, double delta):
    cdef Py_ssize_t K = Jc.shape[0], m = Jc.shape[1], n = Jc.shape[2]
    cdef Py_ssize_t k, i, j
    f_arr = np.empty(K)
    w_arr = np.empty(K)
    g_arr = np.empty(n)
    cdef double[::1] f = f_arr, w = w_arr, g = g_arr
    _half_norms(E, f)
    cdef double lse = _softmin(log_alpha, f, w)
    k = _dominant(log_alpha, f)
    cdef double amax = log_alpha[0]
    for i in range(1, K):
        if log_alpha[i] > amax:
            amax = log_alpha[i]
    cdef double log_c = log(K * exp(amax) + delta)
    cdef double arg = 2.0 * (log_c - (lse + f[k]))
    cdef double e_nl = sqrt(max(arg, 0.0))
    _weighted_gradient(w, E, Jc, g)
    for i in range(m):
        for j in range(n):
            g[j] -= E[k, i] * Jc[k, i, j]
    err_arr = np.empty(m + 1)
    jac_arr = np.zeros((m + 1, n))
    cdef double[::1] err = err_arr
    cdef double[:, ::1] jac = jac_arr
    for i in range(m):
        err[i] = E[k, i]
        for j in range(n):
            jac[i, j] = Jc[k, i, j]
    err[m] = e_nl
    if e_nl > 0.0:
        for j in range(n):
            jac[m, j] = g[j] / e_nl
    return err_arr, jac_arr, int(k), arg


def hessian_sum_mixture(const double[::1] log_alpha, const double[:, ::1] E, const double[:, :, ::1] Jc):
    cdef Py_ssize_t K = Jc.shape[0], m = Jc.shape[1], n = Jc.shape[2]
    cdef Py_ssize_t k, i, j, p
    f_arr = np.empty(K)
    w_arr = np.empty(K)
    cdef double[::1] f = f_arr, w = w_arr
    _half_norms(E, f)
    cdef double lse = _softmin(log_alpha, f, w)
    cdef double wf = 0.0
    for k in range(K):
        wf += w[k] * f[k]
    cdef double arg = 2.0 * (hsm_constant(log_alpha) - lse - wf)
    err_arr = np.empty(K * m + 1)
    jac_arr = np.zeros((K * m + 1, n))
    hess_arr = np.zeros((n, n))
    cdef double[::1] err = err_arr
    cdef double[:, ::1] jac = jac_arr, hess = hess_arr
    cdef double sw, acc
    for k in range(K):
        sw = sqrt(w[k])
        for i in range(m):
            err[k * m + i] = sw * E[k, i]
            for j in range(n):
                jac[k * m + i, j] = sw * Jc[k, i, j]
        for j in range(n):
            for p in range(j, n):
                acc = 0.0
                for i in range(m):
                    acc += Jc[k, i, j] * Jc[k, i, p]
                hess[j, p] += w[k] * acc
    for j in range(n):
        for p in range(j + 1, n):
            hess[p, j] = hess[j, p]
    err[K * m] = sqrt(max(arg, 0.0))
    return err_arr, jac_arr, hess_arr, arg
