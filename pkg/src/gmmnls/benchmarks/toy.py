"""Toy study: a single four-component mixture in 1D or 2D, solved from a grid
of initial points and scored against a brute-force global optimum."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..lie import real_vector
from ..mixtures import MixtureFactor, SharedModelMixture
from ..numdiff import grid_global_optimum
from ..solver import Problem, SolverConfig, SolverError, solve
from ..mixtures import MixtureConsistencyError
from .metrics import TrialRecord


@dataclass
class ToySpec:
    dim: int = 1
    n_components: int = 4
    n_param_draws: int = 100
    n_inits: int = 100
    init_box: tuple = (-4.0, 4.0)
    success_tol: float = 0.01
    seed: int = 0
    grid_resolution: int = 2001

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("toy dimension must be 1 or 2")
        if self.n_components < 1 or self.n_param_draws < 1 or self.n_inits < 1:
            raise ValueError("toy spec counts must be positive")


@dataclass
class ToyInstance:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    ground_truth: np.ndarray

    @property
    def mixture(self) -> SharedModelMixture:
        return SharedModelMixture(self.weights, self.means, self.covariances)


def toy_nll(weights, means, covariances, pts) -> np.ndarray:
    """Mixture NLL (up to a constant) at each row of ``pts``, evaluated directly."""
    pts = np.atleast_2d(pts)
    z = []
    for w, mu, R in zip(weights, means, covariances):
        Ri = np.linalg.inv(R)
        d = pts - mu
        z.append(np.log(w) - 0.5 * np.log(np.linalg.det(R)) - 0.5 * ((d @ Ri) * d).sum(axis=1))
    z = np.stack(z)
    m = z.max(axis=0)
    return -(m + np.log(np.exp(z - m).sum(axis=0)))


def gen_toy_mixture(spec: ToySpec, rng: np.random.Generator, ground_truth: bool = True) -> ToyInstance:
    K, d = spec.n_components, spec.dim
    w1 = rng.uniform(0.2, 0.8)
    weights = np.full(K, (1.0 - w1) / (K - 1)) if K > 1 else np.ones(1)
    weights[0] = w1 if K > 1 else 1.0
    means = np.zeros((K, d))
    means[1:] = rng.uniform(-2.0, 2.0, size=(K - 1, d))
    var1 = rng.uniform(0.4, 1.0)
    scale = np.ones(K)
    scale[1:] = rng.uniform(4.0, 10.0, size=K - 1)
    covs = scale[:, None, None] * var1 * np.eye(d)[None]
    gt = np.full(d, np.nan)
    if ground_truth:
        lo, hi = spec.init_box
        gt = grid_global_optimum(
            lambda p: toy_nll(weights, means, covs, p), [(lo, hi)] * d, spec.grid_resolution
        )
    return ToyInstance(weights, means, covs, np.asarray(gt))


def init_grid(spec: ToySpec) -> np.ndarray:
    lo, hi = spec.init_box
    if spec.dim == 1:
        return np.linspace(lo, hi, spec.n_inits)[:, None]
    side = int(round(np.sqrt(spec.n_inits)))
    if side * side != spec.n_inits:
        raise ValueError("2D toy runs need a square number of initial points")
    ax = np.linspace(lo, hi, side)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def solve_toy(mixture, x0, method, cfg: SolverConfig, delta: float = 1.0):
    problem = Problem([real_vector(x0)], [MixtureFactor(mixture, 0, method, delta)])
    return solve(problem, config=cfg)


def _draw(args):
    spec, draw, methods, cfg, delta, timing = args
    rng = np.random.default_rng([spec.seed, draw])
    inst = gen_toy_mixture(spec, rng)
    mixture = inst.mixture
    records = []
    for i, x0 in enumerate(init_grid(spec)):
        tid = draw * spec.n_inits + i
        for method in methods:
            t0 = time.perf_counter()
            try:
                res = solve_toy(mixture, x0, method, cfg, delta)
                x_hat = res.estimate[0].coords
                iters, conv = res.iterations, res.converged
            except (SolverError, MixtureConsistencyError, np.linalg.LinAlgError):
                x_hat, iters, conv = np.full(spec.dim, np.nan), cfg.max_iters, False
            elapsed = time.perf_counter() - t0
            err = float(np.linalg.norm(x_hat - inst.ground_truth))
            records.append(
                TrialRecord(
                    trial_id=tid,
                    method=method,
                    converged=bool(conv),
                    success=bool(err <= spec.success_tol),
                    iterations=int(iters),
                    rmse=err,
                    wall_time_s=elapsed if timing else None,
                )
            )
    return records


def run_toy_mc(
    spec: ToySpec,
    methods: Sequence[str] = ("mm", "sm", "msm", "hsm"),
    config: SolverConfig | None = None,
    msm_delta: float = 1.0,
    timing: bool = False,
    workers: int = 1,
) -> List[TrialRecord]:
    """Run every method from every grid point for every parameter draw.

    Each draw seeds its own generator from ``(seed, draw)`` so serial and
    parallel runs produce the same records.
    """
    cfg = config or SolverConfig()
    jobs = [(spec, d, tuple(methods), cfg, msm_delta, timing) for d in range(spec.n_param_draws)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            chunks = list(ex.map(_draw, jobs))
    else:
        chunks = [_draw(j) for j in jobs]
    return [r for c in chunks for r in c]
