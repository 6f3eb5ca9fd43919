"""Gaussian-mixture factors and their least-squares formulations.

A mixture term has negative log-likelihood

    J_GMM(x) = -log sum_k alpha_k exp(-f_k(x)),   f_k = 0.5 e_k^T e_k,

with ``alpha_k = w_k det(R_k)^(-1/2)`` and whitened component errors
``e_k = L_k (eta_k(x) - mu_k)``, ``L_k^T L_k = R_k^-1``. Four ways of handing
this to a least-squares solver are provided:

``mm``   Max-Mixture: keep only the dominant component.
``sm``   Sum-Mixture: a single scalar error whose square is the NLL.
``msm``  Max-Sum-Mixture: dominant component plus a scalar remainder.
``hsm``  Hessian-Sum-Mixture: weight-scaled component errors whose Gauss-Newton
         product is ``sum_k w_k J_k^T J_k``, plus one scalar that restores the
         NLL as the solver cost.

Each evaluation returns a :class:`FactorLinearization` whose ``loss`` equals
``0.5 * ||error||^2`` and ``loss - offset`` equals the exact mixture NLL for
``sm``/``msm``/``hsm``, or the max-mixture NLL for ``mm``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import _backend
from .lie import ManifoldElement, real_vector, tangent_dim

log = logging.getLogger(__name__)

METHODS = ("mm", "sm", "msm", "hsm")

CLAMP_TOLERANCE = 1e-12

ErrorModel = Callable[[ManifoldElement], tuple]

#: number of square-root arguments clamped from tiny negative values to zero
clamp_events = 0


class MixtureError(ValueError):
    """Invalid mixture definition (no components, bad weight or covariance)."""


class MixtureConsistencyError(RuntimeError):
    """A square-root argument fell below zero beyond rounding."""


def _as_state(x) -> ManifoldElement:
    return x if isinstance(x, ManifoldElement) else real_vector(x)


def _identity_model(x: ManifoldElement):
    if x.kind != "R":
        raise MixtureError("the default component error model needs an R^n state")
    return x.coords, np.eye(x.coords.shape[0])


@dataclass(frozen=True)
class GaussianComponent:
    """One weighted Gaussian ``w N(eta(x); mu, R)``.

    ``error_fn(x)`` returns ``(eta, d eta / d x)`` with the Jacobian taken with
    respect to a left perturbation of ``x``. ``None`` means ``eta(x) = x``.
    """

    weight: float
    mean: np.ndarray
    covariance: np.ndarray
    error_fn: Optional[ErrorModel] = None


@dataclass(frozen=True)
class NormalizedComponent:
    alpha: float
    log_alpha: float
    sqrt_info: np.ndarray
    mean: np.ndarray
    error_fn: ErrorModel

    def error(self, x):
        """Whitened error ``e_k`` and its Jacobian at ``x``."""
        eta, jac = self.error_fn(_as_state(x))
        r = np.atleast_1d(np.asarray(eta, dtype=float)) - self.mean
        return self.sqrt_info @ r, self.sqrt_info @ np.atleast_2d(jac)


def sqrt_information(R):
    """Return ``(L, logdet R)`` with ``L^T L = R^-1`` from a Cholesky factor."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[0] != R.shape[1] or not np.allclose(R, R.T, rtol=1e-10, atol=1e-12):
        raise MixtureError("covariance must be a symmetric square matrix")
    try:
        U = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise MixtureError("covariance is not positive definite") from exc
    L = solve_triangular(U, np.eye(R.shape[0]), lower=True)
    return L, 2.0 * np.log(np.diag(U)).sum()


def normalize_component(c: GaussianComponent) -> NormalizedComponent:
    if not c.weight > 0.0:
        raise MixtureError(f"component weight must be positive, got {c.weight}")
    L, logdet = sqrt_information(c.covariance)
    log_alpha = np.log(c.weight) - 0.5 * logdet
    return NormalizedComponent(
        alpha=float(np.exp(log_alpha)),
        log_alpha=float(log_alpha),
        sqrt_info=L,
        mean=np.atleast_1d(np.asarray(c.mean, dtype=float)),
        error_fn=c.error_fn or _identity_model,
    )


class GaussianMixture:
    """Mixture whose components each carry their own error model."""

    def __init__(self, components: Sequence[GaussianComponent]):
        if len(components) == 0:
            raise MixtureError("a mixture needs at least one component")
        self.components = tuple(normalize_component(c) for c in components)
        self.log_alpha = np.array([c.log_alpha for c in self.components])
        dims = {c.mean.shape[0] for c in self.components}
        if len(dims) != 1:
            raise MixtureError("all components must share the error dimension")

    @property
    def n_components(self) -> int:
        return len(self.log_alpha)

    def terms(self, x):
        """``(log_alpha, E, Jc)``: log weights, stacked whitened errors, Jacobians."""
        errs, jacs = zip(*(c.error(x) for c in self.components))
        Jc = np.ascontiguousarray(np.stack(jacs))
        if Jc.shape[2] != tangent_dim(_as_state(x)):
            raise MixtureError("component Jacobian width does not match the state dof")
        return self.log_alpha, np.ascontiguousarray(np.stack(errs)), Jc


class SharedModelMixture(GaussianMixture):
    """Mixture whose components share one model ``eta(x)`` and differ in mean,
    covariance and weight. Evaluated without a Python loop over components."""

    def __init__(self, weights, means, covariances, model: Optional[ErrorModel] = None):
        weights = np.asarray(weights, dtype=float)
        means = np.atleast_2d(np.asarray(means, dtype=float))
        covariances = np.asarray(covariances, dtype=float)
        if covariances.ndim == 1:
            covariances = covariances[:, None, None]
        if weights.size == 0:
            raise MixtureError("a mixture needs at least one component")
        if np.any(weights <= 0.0):
            raise MixtureError("component weights must be positive")
        K, m = means.shape
        if weights.shape != (K,) or covariances.shape != (K, m, m):
            raise MixtureError("weights, means and covariances disagree on shape")
        pairs = [sqrt_information(R) for R in covariances]
        self.sqrt_info = np.ascontiguousarray(np.stack([p[0] for p in pairs]))
        self.log_alpha = np.log(weights) - 0.5 * np.array([p[1] for p in pairs])
        self.weights = weights
        self.means = means
        self.covariances = covariances
        self.model = model or _identity_model

    @property
    def components(self):
        return tuple(
            NormalizedComponent(float(np.exp(a)), float(a), L, mu, self.model)
            for a, L, mu in zip(self.log_alpha, self.sqrt_info, self.means)
        )

    def terms(self, x):
        eta, jac = self.model(_as_state(x))
        r = np.ascontiguousarray(np.atleast_1d(eta)[None, :] - self.means)
        jac = np.atleast_2d(jac)
        Jraw = np.ascontiguousarray(np.broadcast_to(jac, (len(self.log_alpha),) + jac.shape))
        E, Jc = _backend.kernels.whiten(self.sqrt_info, r, Jraw)
        return self.log_alpha, E, Jc


def as_mixture(obj) -> GaussianMixture:
    if isinstance(obj, GaussianMixture):
        return obj
    return GaussianMixture(list(obj))


@dataclass
class FactorLinearization:
    """What a factor hands the solver at one state.

    ``hessian`` is set only by Hessian-Sum-Mixture; otherwise the solver uses
    ``jacobian.T @ jacobian``. ``offset`` is the state-independent constant
    separating ``loss`` from the (max-)mixture NLL.
    """

    loss: float
    error: np.ndarray
    jacobian: np.ndarray
    hessian: Optional[np.ndarray] = None
    dominant_index: Optional[int] = None
    offset: float = 0.0
    clamped: bool = False


def _check_sqrt_arg(arg: float, what: str) -> bool:
    global clamp_events
    if arg >= 0.0:
        return False
    if arg < -CLAMP_TOLERANCE:
        raise MixtureConsistencyError(f"{what}: square-root argument {arg:.3e} is negative")
    clamp_events += 1
    log.debug("%s: clamped square-root argument %.3e", what, arg)
    return True


def _lse(v):
    m = np.max(v)
    return m + np.log(np.exp(v - m).sum())


def _scaled_terms(mixture, x):
    log_alpha, E, Jc = as_mixture(mixture).terms(_as_state(x))
    top = float(log_alpha.max())
    return np.ascontiguousarray(log_alpha - top), E, Jc, top


def half_norms(E):
    return 0.5 * np.einsum("ki,ki->k", E, E)


def nll(mixture, x) -> float:
    """Exact mixture NLL ``-log sum_k alpha_k exp(-f_k)``."""
    log_alpha, E, _ = as_mixture(mixture).terms(_as_state(x))
    return float(-_lse(log_alpha - half_norms(E)))


def max_mixture_nll(mixture, x) -> float:
    log_alpha, E, _ = as_mixture(mixture).terms(_as_state(x))
    return float(-np.max(log_alpha - half_norms(E)))


def dominant_index(mixture, x) -> int:
    """Index maximizing ``alpha_k exp(-f_k)``; ties go to the lowest index."""
    log_alpha, E, _ = as_mixture(mixture).terms(_as_state(x))
    return int(np.argmax(log_alpha - half_norms(E)))


def evaluate_max_mixture(mixture, x) -> FactorLinearization:
    la, E, Jc, top = _scaled_terms(mixture, x)
    err, jac, k = _backend.kernels.max_mixture(la, E, Jc)
    return FactorLinearization(0.5 * float(err @ err), err, jac, dominant_index=k, offset=top)


def evaluate_sum_mixture(mixture, x) -> FactorLinearization:
    la, E, Jc, top = _scaled_terms(mixture, x)
    err, jac, arg = _backend.kernels.sum_mixture(la, E, Jc)
    clamped = _check_sqrt_arg(arg, "sum-mixture")
    return FactorLinearization(
        0.5 * float(err @ err), err, jac, offset=top + float(_lse(la)), clamped=clamped
    )


def evaluate_max_sum_mixture(mixture, x, delta: float = 1.0) -> FactorLinearization:
    if not delta > 0.0:
        raise MixtureError("the max-sum-mixture damping constant must be positive")
    la, E, Jc, top = _scaled_terms(mixture, x)
    err, jac, k, arg = _backend.kernels.max_sum_mixture(la, E, Jc, float(delta))
    clamped = _check_sqrt_arg(arg, "max-sum-mixture")
    offset = top + np.log(len(la) + delta)
    return FactorLinearization(
        0.5 * float(err @ err), err, jac, dominant_index=k, offset=float(offset), clamped=clamped
    )


def hsm_weights(mixture, x) -> np.ndarray:
    """Softmin weights ``d rho / d f_k = alpha_k e^-f_k / sum_i alpha_i e^-f_i``."""
    la, E, _, _ = _scaled_terms(mixture, x)
    w, _ = _backend.kernels.softmin(la, half_norms(E))
    return w


def hsm_hessian(mixture, x) -> np.ndarray:
    """``sum_k w_k J_k^T J_k`` with ``w`` from :func:`hsm_weights`."""
    la, E, Jc, _ = _scaled_terms(mixture, x)
    w, _ = _backend.kernels.softmin(la, half_norms(E))
    return np.einsum("k,kin,kip->np", w, Jc, Jc)


def hsm_normalization_constant(alphas) -> float:
    """``log sum_k alpha_k exp(sum_j alpha_j / alpha_k)`` in the log domain."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0 or np.any(alphas <= 0.0):
        raise MixtureError("normalization needs positive weights")
    return float(_backend.kernels.hsm_constant(np.log(alphas)))


def hsm_delta_j(mixture, x) -> float:
    """Gap between the NLL and half the squared norm of the weighted errors,
    using the mixture's own (unscaled) alphas."""
    log_alpha, E, _ = as_mixture(mixture).terms(_as_state(x))
    f = half_norms(E)
    w, lse = _backend.kernels.softmin(np.ascontiguousarray(log_alpha), f)
    return float(-lse - w @ f)


def evaluate_hsm(mixture, x) -> FactorLinearization:
    la, E, Jc, top = _scaled_terms(mixture, x)
    err, jac, hess, arg = _backend.kernels.hessian_sum_mixture(la, E, Jc)
    clamped = _check_sqrt_arg(arg, "hessian-sum-mixture")
    offset = top + float(_backend.kernels.hsm_constant(la))
    return FactorLinearization(0.5 * float(err @ err), err, jac, hessian=hess, offset=offset, clamped=clamped)


def linearize(mixture, x, method: str, delta: float = 1.0) -> FactorLinearization:
    if method == "mm":
        return evaluate_max_mixture(mixture, x)
    if method == "sm":
        return evaluate_sum_mixture(mixture, x)
    if method == "msm":
        return evaluate_max_sum_mixture(mixture, x, delta)
    if method == "hsm":
        return evaluate_hsm(mixture, x)
    raise ValueError(f"unknown mixture method {method!r}; expected one of {METHODS}")


class MixtureFactor:
    """Solver factor wrapping a mixture on a single variable."""

    def __init__(self, mixture, key: int = 0, method: str = "hsm", delta: float = 1.0):
        if method not in METHODS:
            raise ValueError(f"unknown mixture method {method!r}; expected one of {METHODS}")
        self.mixture = as_mixture(mixture)
        self.keys = (key,)
        self.method = method
        self.delta = delta

    def linearize(self, values) -> FactorLinearization:
        return linearize(self.mixture, values[0], self.method, self.delta)

    def __repr__(self):
        return f"MixtureFactor(K={self.mixture.n_components}, method={self.method!r}, key={self.keys[0]})"
