"""Point-set registration study.

Each source point ``m_i`` contributes one mixture factor over every reference
point ``p_j``, with residual ``p_j - C m_i - r`` and covariance
``R = C Sigma_m C^T + Sigma_f``. ``R`` is rebuilt at the current rotation on
every evaluation and treated as constant for differentiation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..lie import ManifoldElement, exp_map, identity, pose, wedge_so3
from ..mixtures import GaussianMixture, MixtureConsistencyError, MixtureFactor, sqrt_information
from ..solver import Problem, SolverConfig, SolverError, laplace_covariance, solve
from .metrics import TrialRecord, split_error


@dataclass
class PsrSpec:
    space: str = "SE2"
    n_landmarks: int | None = None
    landmark_box: float = 5.0
    dup_fraction: float = 0.3
    dup_count: int = 4
    dup_spread_var: float = 0.1
    n_configs: int = 10
    n_pairs: int = 10
    rot_range: float = 15.0 / 180.0
    trans_range: float = 0.5
    cov_eig_range: tuple = (0.1, 0.6)
    seed: int = 0

    def __post_init__(self):
        self.space = self.space.upper()
        if self.space not in ("SE2", "SE3"):
            raise ValueError("registration space must be SE2 or SE3")
        if self.n_landmarks is None:
            self.n_landmarks = 15 if self.space == "SE2" else 20
        if self.n_landmarks < 1 or self.n_configs < 1 or self.n_pairs < 1:
            raise ValueError("registration spec counts must be positive")

    @property
    def dim(self) -> int:
        return 2 if self.space == "SE2" else 3

    @property
    def rot_dof(self) -> int:
        return 1 if self.space == "SE2" else 3


class PsrModel:
    """Reference cloud and noise model shared by all factors of one pair."""

    def __init__(self, targets, sigma_m, sigma_f):
        self.targets = np.ascontiguousarray(targets, dtype=float)
        self.sigma_m = np.asarray(sigma_m, dtype=float)
        self.sigma_f = np.asarray(sigma_f, dtype=float)
        self._key = None
        self._cached = None

    def sqrt_info(self, C):
        # every factor is evaluated at the same rotation in turn
        key = C.tobytes()
        if key != self._key:
            self._cached = sqrt_information(C @ self.sigma_m @ C.T + self.sigma_f)
            self._key = key
        return self._cached


def _point_jacobian(y: np.ndarray) -> np.ndarray:
    """Derivative of ``T y`` under a left perturbation of ``T``."""
    if y.shape[0] == 2:
        return np.array([[-y[1], 1.0, 0.0], [y[0], 0.0, 1.0]])
    return np.hstack([-wedge_so3(y), np.eye(3)])


class PsrMixture(GaussianMixture):
    """Uniform-weight mixture over the reference cloud for one source point."""

    def __init__(self, model: PsrModel, source_point):
        self.model = model
        self.source = np.asarray(source_point, dtype=float)
        M = model.targets.shape[0]
        self._log_w = -np.log(M)
        self.log_alpha = np.full(M, self._log_w)

    @property
    def n_components(self) -> int:
        return self.model.targets.shape[0]

    def terms(self, x: ManifoldElement):
        C, r = x.rotation, x.translation
        y = C @ self.source + r
        L, logdet = self.model.sqrt_info(C)
        E = np.ascontiguousarray((y - self.model.targets) @ L.T)
        J = L @ _point_jacobian(y)
        Jc = np.ascontiguousarray(np.broadcast_to(J, (E.shape[0],) + J.shape))
        return np.full(E.shape[0], self._log_w - 0.5 * logdet), E, Jc


@dataclass
class PsrInstance:
    landmarks: np.ndarray
    sources: np.ndarray
    targets: np.ndarray
    sigma_m: np.ndarray
    sigma_f: np.ndarray
    truth: ManifoldElement

    def problem(self, method: str, delta: float = 1.0) -> Problem:
        kind = "SE2" if self.landmarks.shape[1] == 2 else "SE3"
        model = PsrModel(self.targets, self.sigma_m, self.sigma_f)
        factors = [MixtureFactor(PsrMixture(model, m), 0, method, delta) for m in self.sources]
        return Problem([identity(kind)], factors)


def gen_landmarks(spec: PsrSpec, rng: np.random.Generator) -> np.ndarray:
    d = spec.dim
    base = rng.uniform(-spec.landmark_box, spec.landmark_box, size=(spec.n_landmarks, d))
    n_dup = int(spec.dup_fraction * spec.n_landmarks)
    picked = rng.choice(spec.n_landmarks, size=n_dup, replace=False)
    spread = np.sqrt(spec.dup_spread_var)
    dups = [base[i] + spread * rng.standard_normal((spec.dup_count, d)) for i in picked]
    return np.vstack([base] + dups)


def random_covariance(spec: PsrSpec, rng: np.random.Generator) -> np.ndarray:
    """``C D C^T`` with a random rotation ``C`` and diagonal ``D``."""
    xi = rng.uniform(-np.pi, np.pi, size=spec.rot_dof)
    C = exp_map(xi, "SO2" if spec.dim == 2 else "SO3").rotation
    D = np.diag(rng.uniform(*spec.cov_eig_range, size=spec.dim))
    return C @ D @ C.T


def random_pose(spec: PsrSpec, rng: np.random.Generator) -> ManifoldElement:
    phi = rng.uniform(-spec.rot_range, spec.rot_range, size=spec.rot_dof)
    rho = rng.uniform(-spec.trans_range, spec.trans_range, size=spec.dim)
    return exp_map(np.concatenate([phi, rho]), spec.space)


def gen_psr_instance(spec: PsrSpec, landmarks: np.ndarray, rng: np.random.Generator) -> PsrInstance:
    """Noisy source and reference clouds of ``landmarks`` under a random transform.

    Reference points are ``p = l + n_f``; source points are
    ``m = C^T (l - r) + n_m`` so that ``p - C m - r`` has covariance
    ``C Sigma_m C^T + Sigma_f``.
    """
    truth = random_pose(spec, rng)
    sigma_m = random_covariance(spec, rng)
    sigma_f = random_covariance(spec, rng)
    n, d = landmarks.shape
    C, r = truth.rotation, truth.translation
    noise_m = rng.multivariate_normal(np.zeros(d), sigma_m, size=n)
    noise_f = rng.multivariate_normal(np.zeros(d), sigma_f, size=n)
    sources = (landmarks - r) @ C + noise_m
    targets = landmarks + noise_f
    return PsrInstance(landmarks, sources, targets, sigma_m, sigma_f, pose(C, r))


def _pair(args):
    spec, cfg_idx, landmarks, pair_idx, methods, config, delta, timing = args
    rng = np.random.default_rng([spec.seed, cfg_idx, pair_idx])
    inst = gen_psr_instance(spec, landmarks, rng)
    tid = cfg_idx * spec.n_pairs + pair_idx
    dof = 3 if spec.space == "SE2" else 6
    records = []
    for method in methods:
        t0 = time.perf_counter()
        try:
            res = solve(inst.problem(method, delta), config=config)
        except (SolverError, MixtureConsistencyError, np.linalg.LinAlgError):
            res = None
        elapsed = time.perf_counter() - t0
        if res is None:
            nan = float("nan")
            records.append(
                TrialRecord(tid, method, False, False, config.max_iters, nan, nan, nan, None,
                            elapsed if timing else None)
            )
            continue
        e, rot_deg, trans = split_error(res.estimate[0], inst.truth)
        try:
            P = laplace_covariance(res)
            anees = float(e @ np.linalg.solve(P, e)) / dof
        except (SolverError, np.linalg.LinAlgError):
            anees = None
        records.append(
            TrialRecord(
                trial_id=tid,
                method=method,
                converged=bool(res.converged),
                success=bool(res.converged),
                iterations=int(res.iterations),
                rmse=float(np.linalg.norm(e)),
                rmse_rot_deg=rot_deg,
                rmse_trans_m=trans,
                anees_term=anees,
                wall_time_s=elapsed if timing else None,
            )
        )
    return records


def run_psr_mc(
    spec: PsrSpec,
    methods: Sequence[str] = ("mm", "sm", "msm", "hsm"),
    config: SolverConfig | None = None,
    msm_delta: float = 1.0,
    timing: bool = False,
    workers: int = 1,
) -> List[TrialRecord]:
    """Solve every (configuration, pair) trial with every method from the identity.

    Landmarks come from a generator seeded with ``(seed, config)``; each pair's
    transform, covariances and noise from ``(seed, config, pair)``.
    """
    cfg = config or SolverConfig()
    jobs = []
    for c in range(spec.n_configs):
        landmarks = gen_landmarks(spec, np.random.default_rng([spec.seed, c]))
        jobs.extend((spec, c, landmarks, p, tuple(methods), cfg, msm_delta, timing) for p in range(spec.n_pairs))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            chunks = list(ex.map(_pair, jobs))
    else:
        chunks = [_pair(j) for j in jobs]
    return [r for c in chunks for r in c]
