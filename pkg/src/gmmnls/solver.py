"""Dense Gauss-Newton / Levenberg-Marquardt over manifold-valued variables.

Factors expose ``keys`` (indices into the variable list) and
``linearize(values) -> FactorLinearization``. A factor may supply an explicit
Hessian block, which replaces ``J^T J`` when ``use_custom_hessian`` is on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .lie import ManifoldElement, oplus, real_vector, tangent_dim
from .mixtures import FactorLinearization


class SolverError(RuntimeError):
    pass


class RankDeficiencyError(SolverError, np.linalg.LinAlgError):
    """The Hessian approximation is singular or indefinite."""


class NonFiniteError(SolverError):
    pass


# pivots below this fraction of the largest diagonal entry count as zero
_RANK_TOL = 1e-12


class ErrorFactor:
    """Factor from a plain callable ``fn(values) -> (error, jacobian)``."""

    def __init__(self, fn, keys=(0,)):
        self.fn = fn
        self.keys = tuple(keys)

    def linearize(self, values) -> FactorLinearization:
        e, J = self.fn(values)
        e = np.atleast_1d(np.asarray(e, dtype=float))
        return FactorLinearization(0.5 * float(e @ e), e, np.atleast_2d(np.asarray(J, dtype=float)))


class Problem:
    def __init__(self, variables: Sequence, factors: Sequence = ()):
        self.variables: List[ManifoldElement] = [
            v if isinstance(v, ManifoldElement) else real_vector(v) for v in variables
        ]
        dims = [tangent_dim(v) for v in self.variables]
        self.offsets = np.concatenate(([0], np.cumsum(dims))).astype(int)
        self.factors: list = []
        for f in factors:
            self.add_factor(f)

    @property
    def total_dim(self) -> int:
        return int(self.offsets[-1])

    def add_factor(self, factor) -> None:
        for k in factor.keys:
            if not 0 <= k < len(self.variables):
                raise ValueError(f"factor {factor!r} references unknown variable {k}")
        self.factors.append(factor)

    def slot(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def retract(self, state: Sequence[ManifoldElement], dx: np.ndarray) -> List[ManifoldElement]:
        return [oplus(X, dx[self.slot(k)]) for k, X in enumerate(state)]


@dataclass
class SolverConfig:
    mode: str = "lm"
    use_custom_hessian: bool = False
    step_tol: float = 1e-8
    max_iters: int = 200
    lm_tau: float = 1e-3
    step_size: float = 1.0

    def __post_init__(self):
        if self.mode not in ("gn", "lm"):
            raise ValueError(f"mode must be 'gn' or 'lm', got {self.mode!r}")
        if not self.step_tol > 0 or self.max_iters < 1 or not self.lm_tau > 0:
            raise ValueError("step_tol and lm_tau must be positive and max_iters >= 1")


@dataclass
class OptimizationResult:
    estimate: List[ManifoldElement]
    iterations: int
    converged: bool
    final_cost: float
    information: np.ndarray
    history: List[float] = field(default_factory=list)


def _linearize_all(problem: Problem, state):
    lins = []
    for f in problem.factors:
        lin = f.linearize([state[k] for k in f.keys])
        if not (np.isfinite(lin.loss) and np.all(np.isfinite(lin.error)) and np.all(np.isfinite(lin.jacobian))):
            raise NonFiniteError(f"factor {f!r} produced non-finite values")
        lins.append(lin)
    return lins


def _accumulate(problem: Problem, lins, use_custom_hessian: bool):
    n = problem.total_dim
    g = np.zeros(n)
    H = np.zeros((n, n))
    cost = 0.0
    for f, lin in zip(problem.factors, lins):
        idx = np.concatenate([np.arange(problem.offsets[k], problem.offsets[k + 1]) for k in f.keys])
        J = lin.jacobian
        g[idx] += J.T @ lin.error
        Hf = lin.hessian if (use_custom_hessian and lin.hessian is not None) else J.T @ J
        H[np.ix_(idx, idx)] += Hf
        cost += lin.loss
    return g, H, cost


def assemble(problem: Problem, state=None, use_custom_hessian: bool = False):
    """Return ``(gradient, hessian, cost)`` summed over all factors."""
    state = problem.variables if state is None else state
    if len(state) != len(problem.variables):
        raise ValueError("state does not match the problem's variables")
    return _accumulate(problem, _linearize_all(problem, state), use_custom_hessian)


def newton_step(gradient, hessian) -> np.ndarray:
    """Solve ``H dx = -g`` by Cholesky; raise on a singular or indefinite H."""
    H = np.asarray(hessian, dtype=float)
    g = np.asarray(gradient, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] != g.shape[0]:
        raise ValueError("hessian must be square and match the gradient")
    scale = np.max(np.abs(np.diag(H))) if H.size else 0.0
    try:
        c, low = cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("Hessian is not positive definite") from exc
    if scale == 0.0 or np.min(np.diag(c)) ** 2 <= _RANK_TOL * scale:
        raise RankDeficiencyError("Hessian is numerically rank deficient")
    return -cho_solve((c, low), g, check_finite=False)


def _gauss_newton(problem: Problem, state, cfg: SolverConfig) -> OptimizationResult:
    history = []
    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        g, H, cost = assemble(problem, state, cfg.use_custom_hessian)
        history.append(cost)
        # an exactly stationary point needs no solve, even if H is singular there
        dx = np.zeros_like(g) if not np.any(g) else cfg.step_size * newton_step(g, H)
        state = problem.retract(state, dx)
        if np.linalg.norm(dx) < cfg.step_tol:
            converged = True
            break
    g, H, cost = assemble(problem, state, cfg.use_custom_hessian)
    return OptimizationResult(list(state), it, converged, cost, H, history)


def _levenberg_marquardt(problem: Problem, state, cfg: SolverConfig) -> OptimizationResult:
    n = problem.total_dim
    g, H, cost = _accumulate(problem, _linearize_all(problem, state), cfg.use_custom_hessian)
    if not np.isfinite(cost):
        raise NonFiniteError(f"initial cost is {cost}")
    lam = cfg.lm_tau * float(np.max(np.diag(H))) if n else 0.0
    nu = 2.0
    history = [cost]
    converged = False
    it = 0
    eye = np.eye(n)
    while it < cfg.max_iters:
        it += 1
        try:
            dx = newton_step(g, H + lam * eye)
        except RankDeficiencyError:
            # only reachable while lam is still zero or tiny
            lam = max(lam * nu, 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H))))))
            nu *= 2.0
            continue
        if np.linalg.norm(dx) < cfg.step_tol:
            converged = True
            break
        trial = problem.retract(state, cfg.step_size * dx)
        lins = _linearize_all(problem, trial)
        new_cost = sum(lin.loss for lin in lins)
        if not np.isfinite(new_cost):
            raise NonFiniteError(f"cost became {new_cost} at iteration {it}")
        predicted = -(g @ dx) - 0.5 * dx @ H @ dx
        rho = (cost - new_cost) / predicted if predicted > 0 else -1.0
        if rho > 0:
            state = trial
            g, H, cost = _accumulate(problem, lins, cfg.use_custom_hessian)
            history.append(cost)
            lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
        else:
            lam *= nu
            nu *= 2.0
    return OptimizationResult(list(state), it, converged, cost, H, history)


def solve(problem: Problem, initial_state=None, config: SolverConfig | None = None) -> OptimizationResult:
    cfg = config or SolverConfig()
    state = list(problem.variables if initial_state is None else initial_state)
    state = [v if isinstance(v, ManifoldElement) else real_vector(v) for v in state]
    if cfg.mode == "gn":
        return _gauss_newton(problem, state, cfg)
    return _levenberg_marquardt(problem, state, cfg)


def lm_solve(problem: Problem, initial_state=None, config: SolverConfig | None = None) -> OptimizationResult:
    cfg = config or SolverConfig()
    if cfg.mode != "lm":
        raise ValueError("lm_solve needs mode='lm'")
    return solve(problem, initial_state, cfg)


def laplace_covariance(result_or_information) -> np.ndarray:
    """Inverse of the information matrix, symmetrized."""
    info = getattr(result_or_information, "information", result_or_information)
    info = np.atleast_2d(np.asarray(info, dtype=float))
    try:
        c = cho_factor(info, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("information matrix is not invertible") from exc
    scale = np.max(np.abs(np.diag(info)))
    if scale == 0.0 or np.min(np.diag(c[0])) ** 2 <= _RANK_TOL * scale:
        raise RankDeficiencyError("information matrix is numerically singular")
    P = cho_solve(c, np.eye(info.shape[0]))
    return 0.5 * (P + P.T)
