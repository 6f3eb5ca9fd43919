import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmnls.lie import exp_map, real_vector
from gmmnls.mixtures import SharedModelMixture, dominant_index, linearize, nll
from gmmnls.numdiff import (
    DiffConfig,
    delta_j_from_exponents,
    fd_gradient,
    fd_hessian,
    fd_jacobian,
    grid_global_optimum,
    mixture_nll_exact_hessian,
)


def test_fd_jacobian_identity():
    np.testing.assert_allclose(fd_jacobian(lambda x: x.coords, real_vector([0.3, -1.2])), np.eye(2), atol=1e-9)


def test_fd_jacobian_linear_map(rng):
    A = rng.standard_normal((3, 4))
    np.testing.assert_allclose(fd_jacobian(lambda x: A @ x.coords, real_vector(rng.standard_normal(4))), A, atol=1e-8)


def test_fd_jacobian_accepts_plain_arrays():
    np.testing.assert_allclose(fd_jacobian(lambda x: 2 * x, np.array([1.0, 2.0])), 2 * np.eye(2), atol=1e-9)


def test_fd_jacobian_on_manifold_uses_left_perturbation():
    X = exp_map([0.3, 1.0, 2.0], "SE2")
    # translation moves as t -> R(phi) t + rho under a left perturbation
    J = fd_jacobian(lambda Y: Y.translation, X)
    t = X.translation
    np.testing.assert_allclose(J, [[-t[1], 1, 0], [t[0], 0, 1]], atol=1e-9)


def test_fd_hessian_quadratic(rng):
    x = real_vector(rng.standard_normal(3))
    np.testing.assert_allclose(fd_hessian(lambda y: 0.5 * y.coords @ y.coords, x), np.eye(3), atol=1e-6)
    A = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    H = fd_hessian(lambda y: 0.5 * np.sum((A @ y.coords - b) ** 2), x)
    np.testing.assert_allclose(H, A.T @ A, atol=1e-5)
    np.testing.assert_array_equal(H, H.T)


def test_product_rule_for_vector_scalar_product(rng):
    # d(a v)/dx = v da/dx + a dv/dx
    def a(x):
        return np.sin(x[0]) * x[1]

    def v(x):
        return np.array([x[0] ** 2, np.exp(x[1]), x[0] * x[1]])

    for _ in range(20):
        x = rng.uniform(-1, 1, 2)
        J = fd_jacobian(lambda y: a(y.coords) * v(y.coords), real_vector(x))
        ref = np.outer(v(x), fd_gradient(lambda y: a(y.coords), real_vector(x))) + a(x) * fd_jacobian(
            lambda y: v(y.coords), real_vector(x)
        )
        np.testing.assert_allclose(J, ref, atol=1e-6)


def test_non_finite_samples_raise():
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        fd_jacobian(lambda x: np.log(x.coords), real_vector([1e-9]))


def test_diff_config_validation():
    with pytest.raises(ValueError):
        DiffConfig(step=0.0)
    with pytest.raises(ValueError):
        DiffConfig(scheme="forward")
    with pytest.raises(ValueError):
        fd_jacobian(lambda X: X.translation, exp_map([0.1, 0.2, 0.3], "SE2"), DiffConfig(manifold_aware=False))


def test_grid_optimum_single_gaussian():
    x = grid_global_optimum(lambda p: 0.5 * ((p[:, 0] - 0.7) / 0.3) ** 2, [(-4, 4)], 2001)
    assert x[0] == pytest.approx(0.7, abs=1e-6)


def test_grid_optimum_symmetric_bimodal():
    mix = SharedModelMixture([0.5, 0.5], [[-1.0], [1.0]], [[[0.3]], [[0.3]]])
    f = lambda p: np.array([nll(mix, q) for q in p])  # noqa: E731
    x = grid_global_optimum(f, [(-4, 4)], 2001)
    assert f(x[None])[0] == pytest.approx(f(-x[None])[0], abs=1e-9)
    assert abs(abs(x[0]) - 1.0) < 0.05


def test_grid_optimum_refined_cost_below_grid(rng):
    from gmmnls.benchmarks.toy import ToySpec, gen_toy_mixture, toy_nll

    spec = ToySpec(dim=1, grid_resolution=2001)
    for _ in range(5):
        inst = gen_toy_mixture(spec, rng)
        grid = np.linspace(-4, 4, 2001)[:, None]
        cost = toy_nll(inst.weights, inst.means, inst.covariances, inst.ground_truth[None])[0]
        assert cost <= toy_nll(inst.weights, inst.means, inst.covariances, grid).min()


def test_grid_optimum_two_dimensional():
    x = grid_global_optimum(lambda p: (p[:, 0] - 0.25) ** 2 + 2 * (p[:, 1] + 1.1) ** 2, [(-2, 2), (-2, 2)], 201)
    np.testing.assert_allclose(x, [0.25, -1.1], atol=1e-6)
    with pytest.raises(ValueError):
        grid_global_optimum(lambda p: p[:, 0], [(-1, 1)], 1)


def _random_mixture(rng, d, K):
    Rs = []
    for _ in range(K):
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        Rs.append(Q @ np.diag(rng.uniform(0.3, 2.0, d)) @ Q.T)
    w = rng.uniform(0.2, 1, K)
    return SharedModelMixture(w / w.sum(), rng.uniform(-1.5, 1.5, (K, d)), np.stack(Rs))


@pytest.mark.parametrize("d", [1, 2])
def test_fd_hessian_matches_chain_rule_hessian(rng, d):
    for _ in range(20):
        mix = _random_mixture(rng, d, 3)
        x = real_vector(rng.uniform(-2, 2, d))
        la, E, Jc = mix.terms(x)
        H = mixture_nll_exact_hessian(la, E, Jc)
        scale = np.abs(H).max()
        for method in ("sm", "msm", "hsm"):
            H_fd = fd_hessian(lambda y: linearize(mix, y, method).loss, x)
            assert np.abs(H_fd - H).max() <= 1e-4 * scale


@pytest.mark.parametrize("d", [1, 2])
def test_fd_hessian_of_max_mixture_is_dominant_gauss_newton(rng, d):
    for _ in range(20):
        mix = _random_mixture(rng, d, 3)
        x = real_vector(rng.uniform(-2, 2, d))
        k = dominant_index(mix, x)
        steps = [np.eye(d)[i] * 2e-4 * s for i in range(d) for s in (-1, 1)]
        if any(dominant_index(mix, real_vector(x.coords + s)) != k for s in steps):
            continue
        H = np.linalg.inv(mix.covariances[k])
        H_fd = fd_hessian(lambda y: linearize(mix, y, "mm").loss, x)
        assert np.abs(H_fd - H).max() <= 1e-4 * np.abs(H).max()


@settings(max_examples=200, deadline=None)
@given(
    la=st.lists(st.floats(-8, 8), min_size=1, max_size=6),
    seed=st.integers(0, 2**31),
)
def test_delta_j_exponent_form_matches_definition(la, seed):
    rng = np.random.default_rng(seed)
    la = np.array(la)
    f = rng.exponential(5.0, la.size)
    z = la - f
    w = np.exp(z - z.max())
    w /= w.sum()
    direct = -(z.max() + np.log(np.exp(z - z.max()).sum())) - w @ f
    assert delta_j_from_exponents(la, f) == pytest.approx(direct, abs=1e-9)


def test_exact_hessian_oracle_against_fd_of_nll(rng):
    mix = _random_mixture(rng, 2, 4)
    x = real_vector([0.2, -0.4])
    H = mixture_nll_exact_hessian(*mix.terms(x))
    np.testing.assert_allclose(fd_hessian(lambda y: nll(mix, y), x), H, atol=1e-6)
