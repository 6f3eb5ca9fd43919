"""Pure numpy implementation of the mixture kernels.

Mirrors ``_kernels.pyx`` call for call; used when the compiled module is
unavailable or ``GMMNLS_PURE_PYTHON`` is set. Inputs are the whitened component
errors ``E`` (K, m), their Jacobians ``Jc`` (K, m, n) and ``log_alpha`` (K,).
"""

import numpy as np


def _lse(v):
    m = v.max()
    return m + np.log(np.exp(v - m).sum())


def whiten(L, r, Jraw):
    E = np.einsum("kij,kj->ki", L, r)
    Jc = np.einsum("kij,kjn->kin", L, Jraw)
    return E, Jc


def softmin(log_alpha, f):
    z = log_alpha - f
    m = z.max()
    p = np.exp(z - m)
    s = p.sum()
    return p / s, m + np.log(s)


def hsm_constant(log_alpha):
    ratios = np.exp(_lse(log_alpha) - log_alpha)
    return _lse(log_alpha + ratios)


def max_mixture(log_alpha, E, Jc):
    f = 0.5 * np.einsum("ki,ki->k", E, E)
    k = int(np.argmax(log_alpha - f))
    m, n = Jc.shape[1], Jc.shape[2]
    err = np.empty(m + 1)
    err[0] = np.sqrt(max(2.0 * (log_alpha.max() - log_alpha[k]), 0.0))
    err[1:] = E[k]
    jac = np.zeros((m + 1, n))
    jac[1:] = Jc[k]
    return err, jac, k


def sum_mixture(log_alpha, E, Jc):
    f = 0.5 * np.einsum("ki,ki->k", E, E)
    w, lse = softmin(log_alpha, f)
    arg = 2.0 * (_lse(log_alpha) - lse)
    e = np.sqrt(max(arg, 0.0))
    grad = np.einsum("k,ki,kin->n", w, E, Jc)
    jac = (grad / e)[None, :] if e > 0.0 else np.zeros((1, Jc.shape[2]))
    return np.array([e]), jac, arg


def max_sum_mixture(log_alpha, E, Jc, delta):
    f = 0.5 * np.einsum("ki,ki->k", E, E)
    w, lse = softmin(log_alpha, f)
    k = int(np.argmax(log_alpha - f))
    K, m, n = Jc.shape
    log_c = np.log(K * np.exp(log_alpha.max()) + delta)
    arg = 2.0 * (log_c - (lse + f[k]))
    e_nl = np.sqrt(max(arg, 0.0))
    g_star = E[k] @ Jc[k]
    grad = np.einsum("k,ki,kin->n", w, E, Jc) - g_star
    err = np.empty(m + 1)
    err[:m] = E[k]
    err[m] = e_nl
    jac = np.empty((m + 1, n))
    jac[:m] = Jc[k]
    jac[m] = grad / e_nl if e_nl > 0.0 else 0.0
    return err, jac, k, arg


def hessian_sum_mixture(log_alpha, E, Jc):
    f = 0.5 * np.einsum("ki,ki->k", E, E)
    w, lse = softmin(log_alpha, f)
    K, m, n = Jc.shape
    delta_j = -lse - w @ f
    arg = 2.0 * (hsm_constant(log_alpha) + delta_j)
    sw = np.sqrt(w)
    err = np.empty(K * m + 1)
    err[:-1] = (sw[:, None] * E).ravel()
    err[-1] = np.sqrt(max(arg, 0.0))
    jac = np.zeros((K * m + 1, n))
    jac[:-1] = (sw[:, None, None] * Jc).reshape(K * m, n)
    hess = np.einsum("k,kin,kip->np", w, Jc, Jc)
    return err, jac, hess, arg
