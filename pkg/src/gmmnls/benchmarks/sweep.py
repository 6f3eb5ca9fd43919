"""Hessian of each formulation against the exact NLL Hessian along a 1D line."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..lie import real_vector
from ..mixtures import METHODS, SharedModelMixture, linearize, nll
from ..numdiff import fd_hessian

SWEEP_COLUMNS = ["x", "h_exact", "h_mm", "h_sm", "h_msm", "h_hsm"]


def default_sweep_mixture() -> SharedModelMixture:
    """Two zero-mean components with standard deviations 1 and 3, equal weights."""
    return SharedModelMixture([0.5, 0.5], [[0.0], [0.0]], [[[1.0]], [[9.0]]])


@dataclass
class SweepResult:
    x: np.ndarray
    hessians: Dict[str, np.ndarray]
    deviation: Dict[str, float]

    def rows(self):
        cols = [self.x, self.hessians["exact"]] + [self.hessians[m] for m in METHODS]
        return np.column_stack(cols)


def method_hessian(mixture, x: float, method: str, delta: float = 1.0) -> float:
    """Hessian the solver would use: the explicit one if given, else ``J^T J``."""
    lin = linearize(mixture, real_vector([x]), method, delta)
    H = lin.hessian if lin.hessian is not None else lin.jacobian.T @ lin.jacobian
    return float(H[0, 0])


def hessian_sweep_1d(mixture=None, x_range=(-5.0, 5.0), n_samples: int = 1001, delta: float = 1.0) -> SweepResult:
    """Sample every method's Hessian and the finite-difference NLL Hessian.

    ``deviation[m]`` is the trapezoid integral of ``|H_m - H_exact|``.
    """
    mixture = mixture or default_sweep_mixture()
    if n_samples < 2:
        raise ValueError("a sweep needs at least two samples")
    xs = np.linspace(x_range[0], x_range[1], n_samples)
    exact = np.array([fd_hessian(lambda p: nll(mixture, p), real_vector([x]))[0, 0] for x in xs])
    hess = {"exact": exact}
    for m in METHODS:
        hess[m] = np.array([method_hessian(mixture, x, m, delta) for x in xs])
    dev = {m: float(np.trapezoid(np.abs(hess[m] - exact), xs)) for m in METHODS}
    return SweepResult(xs, hess, dev)


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in result.rows():
            w.writerow([repr(float(v)) for v in row])
