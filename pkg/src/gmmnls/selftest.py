"""Acceptance checks shared by the ``selftest`` command and the test suite.

Each check returns a :class:`CheckResult`. The fast checks (formulation
exactness, degeneracy, Lie fuzz, Hessian sweep) run in seconds; the
Monte-Carlo checks reproduce the desk-scale studies and take minutes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .lie import exp_map, log_map, ominus, oplus, orthonormality_error, real_vector
from .mixtures import (
    METHODS,
    GaussianComponent,
    GaussianMixture,
    MixtureFactor,
    SharedModelMixture,
    hsm_normalization_constant,
    linearize,
)
from .numdiff import delta_j_from_exponents, fd_gradient
from .solver import (
    ErrorFactor,
    Problem,
    RankDeficiencyError,
    SolverConfig,
    assemble,
    newton_step,
    solve,
)


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.criterion}. {self.name}: {self.detail}"


# ---------------------------------------------------------------- helpers


def random_spd(rng, d, lo=0.2, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q @ np.diag(rng.uniform(lo, hi, d)) @ Q.T


def random_mixture(rng, d=None, K=None):
    d = d or int(rng.integers(1, 4))
    K = K or int(rng.integers(1, 6))
    w = rng.uniform(0.05, 1.0, K)
    w /= w.sum()
    means = rng.uniform(-3, 3, (K, d))
    covs = np.stack([random_spd(rng, d) for _ in range(K)])
    return w, means, covs


def scipy_nll(w, means, covs, x):
    """``-log sum_k w_k N(x; mu_k, R_k)`` minus the ``(d/2) log 2 pi`` constant."""
    d = means.shape[1]
    lp = [np.log(wk) + multivariate_normal(mu, R).logpdf(x) for wk, mu, R in zip(w, means, covs)]
    return float(-logsumexp(lp) - 0.5 * d * np.log(2 * np.pi))


def scipy_max_nll(w, means, covs, x):
    d = means.shape[1]
    lp = [np.log(wk) + multivariate_normal(mu, R).logpdf(x) for wk, mu, R in zip(w, means, covs)]
    return float(-max(lp) - 0.5 * d * np.log(2 * np.pi))


def _raw_alphas(w, covs):
    return np.array([wk / np.sqrt(np.linalg.det(R)) for wk, R in zip(w, covs)])


# ---------------------------------------------------------------- 5: exactness


def check_exactness(seed: int = 0, n_pairs: int = 1000, n_fuzz: int = 10_000) -> List[CheckResult]:
    rng = np.random.default_rng([seed, 5])
    worst = {m: 0.0 for m in METHODS}
    worst_grad = worst_gn = worst_norm = 0.0
    for _ in range(n_pairs):
        w, means, covs = random_mixture(rng)
        mix = SharedModelMixture(w, means, covs)
        x = rng.uniform(-4, 4, means.shape[1])
        exact = scipy_nll(w, means, covs, x)
        for m in METHODS:
            lin = linearize(mix, x, m)
            ref = scipy_max_nll(w, means, covs, x) if m == "mm" else exact
            worst[m] = max(worst[m], abs(lin.loss - lin.offset - ref))
        lin = linearize(mix, x, "hsm")
        g_fd = fd_gradient(lambda y: scipy_nll(w, means, covs, y.coords), real_vector(x))
        worst_grad = max(worst_grad, float(np.abs(lin.jacobian.T @ lin.error - g_fd).max()))
        # independent weighted Gauss-Newton Hessian
        lp = np.array([np.log(wk) + multivariate_normal(mu, R).logpdf(x) for wk, mu, R in zip(w, means, covs)])
        wts = np.exp(lp - logsumexp(lp))
        H_ref = sum(wk * np.linalg.inv(R) for wk, R in zip(wts, covs))
        JtJ = lin.jacobian.T @ lin.jacobian
        scale = max(1.0, float(np.abs(H_ref).max()))
        worst_gn = max(worst_gn, float(np.abs(JtJ - lin.hessian).max()) / scale,
                       float(np.abs(JtJ - H_ref).max()) / scale)
        a = _raw_alphas(w, covs)
        c_ref = float(logsumexp(np.log(a) + a.sum() / a))
        worst_norm = max(worst_norm, abs(0.5 * float(lin.error @ lin.error) - (exact + c_ref)))

    min_gap = np.inf
    for _ in range(n_fuzz):
        K = int(rng.integers(1, 8))
        la = rng.uniform(-6, 6, K)
        f = rng.exponential(rng.uniform(0.1, 50.0), K)
        gap = delta_j_from_exponents(la, f) + hsm_normalization_constant(np.exp(la))
        min_gap = min(min_gap, gap)

    out = [
        CheckResult(5, f"(a) {m} loss - offset = NLL", worst[m] <= 1e-9, f"max |diff| {worst[m]:.2e} over {n_pairs} pairs")
        for m in METHODS
    ]
    out += [
        CheckResult(5, "(b) HSM J^T e = finite-difference gradient", worst_grad <= 1e-6, f"max |diff| {worst_grad:.2e}"),
        CheckResult(5, "(c) HSM J^T J = weighted Hessian", worst_gn <= 1e-12, f"max rel diff {worst_gn:.2e}"),
        CheckResult(5, "(d) delta J + c_HSM >= 0", bool(min_gap >= 0.0), f"min {min_gap:.3e} over {n_fuzz} samples"),
        CheckResult(5, "(e) 0.5|e|^2 = NLL + c_HSM", worst_norm <= 1e-9, f"max |diff| {worst_norm:.2e}"),
    ]
    return out


# ---------------------------------------------------------------- 6: degeneracy


def _curved_model(x):
    a, b = x.coords
    return np.array([np.sin(a) + b * b, a * b]), np.array([[np.cos(a), 2 * b], [b, a]])


def check_degeneracy(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng([seed, 6])
    worst = 0.0
    for _ in range(100):
        mu = rng.uniform(-1, 1, 2)
        R = random_spd(rng, 2)
        mix = GaussianMixture([GaussianComponent(1.0, mu, R, _curved_model)])
        L = np.linalg.cholesky(np.linalg.inv(R)).T
        x0 = rng.uniform(-1, 1, 2)

        def plain(vals, L=L, mu=mu):
            eta, J = _curved_model(vals[0])
            return L @ (eta - mu), L @ J

        g1, H1, _ = assemble(Problem([x0], [MixtureFactor(mix, 0, "hsm")]), use_custom_hessian=True)
        g2, H2, _ = assemble(Problem([x0], [ErrorFactor(plain)]))
        try:
            d1, d2 = newton_step(g1, H1), newton_step(g2, H2)
        except RankDeficiencyError:
            continue
        worst = max(worst, float(np.abs(d1 - d2).max() / max(1.0, np.abs(d2).max())))

    w, means, covs = random_mixture(rng, d=2, K=3)
    g, H, _ = assemble(Problem([np.array([0.7, -0.4])], [MixtureFactor(SharedModelMixture(w, means, covs), 0, "sm")]))
    sv = np.linalg.svd(H, compute_uv=False)
    rank_one = bool(sv[1] <= 1e-12 * sv[0])
    try:
        newton_step(g, H)
        raised = False
    except RankDeficiencyError:
        raised = True

    mix = SharedModelMixture([0.3, 0.7], [[0.0, 0.0], [1.5, -1.0]], [np.eye(2), 4 * np.eye(2)])
    pb = Problem([np.array([3.0, 3.0])], [MixtureFactor(mix, 0, "hsm")])
    res = solve(pb, config=SolverConfig(step_tol=1e-8, max_iters=200))
    capped = solve(pb, config=SolverConfig(step_tol=1e-8, max_iters=3))
    res2 = solve(pb, config=SolverConfig(step_tol=1e-8, max_iters=200))
    lm_ok = (
        res.converged
        and res.iterations <= 200
        and capped.iterations == 3
        and not capped.converged
        and res2.iterations == res.iterations
    )
    return [
        CheckResult(6, "K=1 HSM step equals Gauss-Newton step", worst <= 1e-12, f"max rel diff {worst:.2e}"),
        CheckResult(6, "sum-mixture 2D Gauss-Newton Hessian is rank one", rank_one and raised,
                    f"singular values {sv[0]:.3e}, {sv[1]:.1e}; Newton step refused: {raised}"),
        CheckResult(6, "LM stops at step_tol or the iteration cap", bool(lm_ok),
                    f"converged in {res.iterations} iterations; cap of 3 gave {capped.iterations}"),
    ]


# ---------------------------------------------------------------- 7: Lie fuzz


def check_lie(seed: int = 0, n: int = 10_000) -> List[CheckResult]:
    out = []
    dims = {"SO2": 1, "SE2": 3, "SO3": 3, "SE3": 6}
    for kind, dof in dims.items():
        rng = np.random.default_rng([seed, 7, dof, len(kind)])
        rb = 1 if kind in ("SO2", "SE2") else 3
        worst_rt = worst_inv = worst_orth = 0.0
        for _ in range(n):
            xi = rng.uniform(-1, 1, dof)
            # keep the rotation angle below pi - 0.1 so log is single valued
            xi[:rb] *= rng.uniform(0, np.pi - 0.1) / max(np.linalg.norm(xi[:rb]), 1e-300)
            if dof > rb:
                xi[rb:] *= 5.0
            X = exp_map(xi, kind)
            worst_rt = max(worst_rt, float(np.abs(log_map(X) - xi).max()))
            d = rng.uniform(-0.5, 0.5, dof)
            Y = oplus(X, d)
            worst_inv = max(worst_inv, float(np.abs(ominus(Y, X) - d).max()))
            Z = oplus(X, ominus(Y, X))
            worst_inv = max(worst_inv, float(np.abs(Z.matrix() - Y.matrix()).max()))
            worst_orth = max(worst_orth, orthonormality_error(Y))
        worst = max(worst_rt, worst_inv, worst_orth)
        out.append(
            CheckResult(
                7,
                f"{kind} exp/log, oplus/ominus, orthonormality",
                worst <= 1e-9,
                f"round trip {worst_rt:.1e}, inverse {worst_inv:.1e}, orthonormality {worst_orth:.1e}",
            )
        )
    return out


# ---------------------------------------------------------------- 4: sweep


def check_sweep() -> List[CheckResult]:
    from .benchmarks.sweep import hessian_sweep_1d

    dev = hessian_sweep_1d().deviation
    ok = dev["hsm"] < dev["msm"] and dev["hsm"] < dev["mm"]
    detail = ", ".join(f"{m} {dev[m]:.3f}" for m in METHODS)
    return [CheckResult(4, "integrated |H - H_exact|: HSM below MSM and MM", ok, detail)]


# ---------------------------------------------------------------- 1-3: Monte Carlo


def _toy_checks(criterion, dim, ratio, seed, budget=None):
    from .benchmarks.metrics import aggregate
    from .benchmarks.toy import ToySpec, run_toy_mc

    t0 = time.perf_counter()
    a = aggregate(run_toy_mc(ToySpec(dim=dim, seed=seed)))
    elapsed = time.perf_counter() - t0
    succ = {m: a[m].success_rate for m in METHODS}
    it = {m: a[m].avg_iterations for m in METHODS}
    trio = [succ["sm"], succ["msm"], succ["hsm"]]
    out = [
        CheckResult(criterion, f"toy {dim}D SM/MSM/HSM success within 4 pp and >= 93%",
                    max(trio) - min(trio) <= 0.04 and min(trio) >= 0.93,
                    "success " + ", ".join(f"{m} {100 * succ[m]:.1f}%" for m in METHODS)),
        CheckResult(criterion, f"toy {dim}D MM success <= 60%", succ["mm"] <= 0.60, f"{100 * succ['mm']:.1f}%"),
        CheckResult(criterion, f"toy {dim}D iterations HSM < MSM < SM, HSM <= {ratio} MSM",
                    it["hsm"] < it["msm"] < it["sm"] and it["hsm"] <= ratio * it["msm"],
                    "iterations " + ", ".join(f"{m} {it[m]:.2f}" for m in METHODS)),
    ]
    if budget is not None:
        out.append(CheckResult(criterion, f"toy {dim}D runtime < {budget:.0f} s", elapsed < budget, f"{elapsed:.1f} s"))
    return out


def check_toy_1d(seed: int = 0) -> List[CheckResult]:
    return _toy_checks(1, 1, 0.75, seed, budget=300.0)


def check_toy_2d(seed: int = 0) -> List[CheckResult]:
    return _toy_checks(2, 2, 0.85, seed)


def check_psr_2d(seed: int = 0) -> List[CheckResult]:
    from .benchmarks.metrics import aggregate
    from .benchmarks.psr import PsrSpec, run_psr_mc

    t0 = time.perf_counter()
    a = aggregate(run_psr_mc(PsrSpec(space="SE2", seed=seed)))
    elapsed = time.perf_counter() - t0
    tr = [a[m].rmse_trans for m in ("sm", "msm", "hsm")]
    an = {m: a[m].anees for m in METHODS}
    return [
        CheckResult(3, "PSR 2D SM/MSM/HSM translation RMSE within 10%", max(tr) <= 1.1 * min(tr),
                    "trans RMSE " + ", ".join(f"{v:.4f}" for v in tr)),
        CheckResult(3, "PSR 2D SM ANEES < 0.2", an["sm"] is not None and an["sm"] < 0.2, f"{an['sm']:.3f}"),
        CheckResult(3, "PSR 2D |ANEES_HSM - 1| <= |ANEES_MSM - 1|", abs(an["hsm"] - 1) <= abs(an["msm"] - 1),
                    f"HSM {an['hsm']:.3f}, MSM {an['msm']:.3f}"),
        CheckResult(3, "PSR 2D runtime < 600 s", elapsed < 600.0, f"{elapsed:.1f} s"),
    ]


FAST_CHECKS: Dict[str, Callable[..., List[CheckResult]]] = {
    "sweep": lambda seed: check_sweep(),
    "exactness": lambda seed: check_exactness(seed),
    "degeneracy": lambda seed: check_degeneracy(seed),
    "lie": lambda seed: check_lie(seed),
}

SLOW_CHECKS: Dict[str, Callable[..., List[CheckResult]]] = {
    "toy1d": check_toy_1d,
    "toy2d": check_toy_2d,
    "psr2d": check_psr_2d,
}


def run_selftest(seed: int = 0, full: bool = False, echo=print) -> bool:
    checks = dict(FAST_CHECKS)
    if full:
        checks.update(SLOW_CHECKS)
    ok = True
    for fn in checks.values():
        for r in fn(seed):
            echo(r.line())
            ok &= r.passed
    return ok
