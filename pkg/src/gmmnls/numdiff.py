"""Finite-difference and brute-force oracles.

These never call into the mixture formulations; they only evaluate plain
functions, so they can check those formulations independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lie import ManifoldElement, oplus, real_vector, tangent_dim


@dataclass(frozen=True)
class DiffConfig:
    step: float = 1e-6
    scheme: str = "central"
    manifold_aware: bool = True

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("finite-difference step must be positive")
        if self.scheme != "central":
            raise ValueError("only central differences are supported")


# second differences lose ~eps/h^2; 1e-4 balances that against truncation
HESSIAN_CONFIG = DiffConfig(step=1e-4)


def _perturb(x, dx, cfg):
    if isinstance(x, ManifoldElement):
        if cfg.manifold_aware or x.kind == "R":
            return oplus(x, dx)
        raise ValueError("non-manifold perturbation of a group element")
    return np.asarray(x, dtype=float) + dx


def _dim(x):
    return tangent_dim(x) if isinstance(x, ManifoldElement) else np.asarray(x).size


def _checked(v):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("function returned non-finite values during differencing")
    return v


def fd_jacobian(fun, x, cfg: DiffConfig = DiffConfig()) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` along each tangent axis of ``x``."""
    n = _dim(x)
    h = cfg.step
    cols = []
    for i in range(n):
        d = np.zeros(n)
        d[i] = h
        cols.append((_checked(fun(_perturb(x, d, cfg))) - _checked(fun(_perturb(x, -d, cfg)))) / (2 * h))
    return np.column_stack(cols)


def fd_gradient(fun, x, cfg: DiffConfig = DiffConfig()) -> np.ndarray:
    return fd_jacobian(lambda y: np.atleast_1d(fun(y)), x, cfg)[0]


def fd_hessian(fun, x, cfg: DiffConfig = HESSIAN_CONFIG) -> np.ndarray:
    """Central second differences of a scalar function, symmetrized."""
    n = _dim(x)
    h = cfg.step
    H = np.empty((n, n))

    def val(d):
        return float(_checked(fun(_perturb(x, d, cfg)))[0])

    f0 = val(np.zeros(n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        H[i, i] = (val(2 * ei) - 2 * f0 + val(-2 * ei)) / (4 * h * h)
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            H[i, j] = (val(ei + ej) - val(ei - ej) - val(-ei + ej) + val(-ei - ej)) / (4 * h * h)
            H[j, i] = H[i, j]
    return 0.5 * (H + H.T)


def _damped_newton(fun, x0, max_iters=100, tol=1e-12):
    """Levenberg-Marquardt on ``fun`` using finite-difference derivatives."""
    x = np.asarray(x0, dtype=float).copy()
    fx = fun(x)
    lam = 1e-3
    for _ in range(max_iters):
        g = fd_gradient(fun, x)
        H = fd_hessian(fun, x)
        Hd = H + lam * np.eye(x.size)
        try:
            step = -np.linalg.solve(Hd, g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        if np.linalg.norm(step) < tol:
            break
        f_new = fun(x + step)
        if f_new <= fx and np.all(np.linalg.eigvalsh(Hd) > 0):
            x, fx = x + step, f_new
            lam = max(lam / 3, 1e-12)
        else:
            lam *= 4
            if lam > 1e12:
                break
    return x


def grid_global_optimum(fun, bounds, resolution: int = 2001, refine: bool = True, chunk: int = 1 << 18):
    """Brute-force minimizer of a vectorized ``fun`` over a box.

    ``fun`` maps an ``(N, d)`` array of points to ``N`` costs. The best grid
    point is refined with finite-difference Levenberg-Marquardt; the refined
    point is returned only if it does not increase the cost.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2 per axis")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    d = len(axes)
    total = resolution**d
    best_val, best_x = np.inf, None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        pts = np.column_stack([ax[i] for ax, i in zip(axes, np.unravel_index(idx, (resolution,) * d))])
        vals = fun(pts)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_x = float(vals[j]), pts[j].copy()
    if not refine:
        return best_x
    scalar = lambda y: float(fun(np.atleast_2d(y))[0])  # noqa: E731
    refined = _damped_newton(scalar, best_x)
    return refined if scalar(refined) <= best_val else best_x


def mixture_nll_exact_hessian(log_alpha, E, Jc) -> np.ndarray:
    """Full chain-rule Hessian of ``-log sum alpha_k exp(-0.5|e_k|^2)`` for
    affine component errors ``e_k`` with Jacobians ``Jc[k]``."""
    f = 0.5 * np.einsum("ki,ki->k", E, E)
    z = log_alpha - f
    w = np.exp(z - z.max())
    w /= w.sum()
    G = np.einsum("ki,kin->kn", E, Jc)
    gbar = w @ G
    return (
        np.einsum("k,kin,kip->np", w, Jc, Jc)
        - np.einsum("k,kn,kp->np", w, G, G)
        + np.outer(gbar, gbar)
    )


def delta_j_from_exponents(log_alpha, f) -> float:
    """The NLL gap written as ``-log sum_k alpha_k exp(S_k)`` with
    ``S_k = sum_j w_j (f_j - f_k)``."""
    log_alpha = np.asarray(log_alpha, dtype=float)
    f = np.asarray(f, dtype=float)
    z = log_alpha - f
    w = np.exp(z - z.max())
    w /= w.sum()
    S = w @ f - f
    t = log_alpha + S
    m = t.max()
    return float(-(m + np.log(np.exp(t - m).sum())))


def as_vector_function(fun):
    """Adapt ``fun(ManifoldElement)`` to accept raw coordinate arrays."""
    return lambda x: fun(x if isinstance(x, ManifoldElement) else real_vector(x))
