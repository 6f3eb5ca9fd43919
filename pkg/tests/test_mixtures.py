import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmnls import _backend, _kernels_py, mixtures
from gmmnls.lie import exp_map, oplus, real_vector
from gmmnls.mixtures import (
    METHODS,
    GaussianComponent,
    GaussianMixture,
    MixtureConsistencyError,
    MixtureError,
    MixtureFactor,
    SharedModelMixture,
    dominant_index,
    evaluate_hsm,
    evaluate_max_mixture,
    evaluate_max_sum_mixture,
    evaluate_sum_mixture,
    hsm_delta_j,
    hsm_hessian,
    hsm_normalization_constant,
    hsm_weights,
    linearize,
    nll,
    normalize_component,
)
from gmmnls.numdiff import delta_j_from_exponents, fd_gradient, fd_jacobian


def spd(rng, d):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q @ np.diag(rng.uniform(0.2, 3.0, d)) @ Q.T


def random_mixture(rng, d=2, K=3):
    w = rng.uniform(0.1, 1.0, K)
    return SharedModelMixture(w / w.sum(), rng.uniform(-2, 2, (K, d)), np.stack([spd(rng, d) for _ in range(K)]))


def direct_nll(mix, x):
    """NLL from explicit inverses and determinants, no whitening."""
    x = np.asarray(x, dtype=float)
    terms = []
    for w, mu, R in zip(mix.weights, mix.means, mix.covariances):
        d = x - mu
        terms.append(w / math.sqrt(np.linalg.det(R)) * math.exp(-0.5 * d @ np.linalg.solve(R, d)))
    return -math.log(sum(terms))


def scalar_mixture(alphas_and_means, sigma=1.0):
    """1D mixture with unit-ish covariances; weights chosen to give the requested alpha."""
    comps = [GaussianComponent(a * sigma, np.array([m]), np.array([[sigma**2]])) for a, m in alphas_and_means]
    return GaussianMixture(comps)


# ---------------------------------------------------------------- components


def test_normalize_identity_component():
    c = normalize_component(GaussianComponent(1.0, np.zeros(1), np.eye(1)))
    assert c.alpha == 1.0
    e, J = c.error(np.array([2.0]))
    np.testing.assert_array_equal(e, [2.0])
    np.testing.assert_array_equal(J, [[1.0]])


def test_normalize_scalar_covariance():
    c = normalize_component(GaussianComponent(1.0, np.zeros(1), np.array([[4.0]])))
    assert c.alpha == pytest.approx(0.5, abs=1e-15)
    e, _ = c.error(np.array([2.0]))
    np.testing.assert_allclose(e, [1.0], atol=1e-15)


def test_whitened_error_matches_direct_inverse(rng):
    for d in (1, 2, 3, 5):
        R = spd(rng, d)
        mu = rng.standard_normal(d)
        x = rng.standard_normal(d)
        c = normalize_component(GaussianComponent(0.7, mu, R))
        e, _ = c.error(x)
        r = x - mu
        np.testing.assert_allclose(e @ e, r @ np.linalg.inv(R) @ r, rtol=1e-10)
        assert c.alpha == pytest.approx(0.7 / math.sqrt(np.linalg.det(R)), rel=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(weight=1.0, mean=np.zeros(2), covariance=np.array([[1.0, 2.0], [2.0, 1.0]])),
        dict(weight=1.0, mean=np.zeros(2), covariance=np.array([[1.0, 0.5], [0.0, 1.0]])),
        dict(weight=0.0, mean=np.zeros(1), covariance=np.eye(1)),
    ],
)
def test_invalid_component_raises(kwargs):
    with pytest.raises(MixtureError):
        normalize_component(GaussianComponent(**kwargs))


def test_invalid_mixtures_raise():
    with pytest.raises(MixtureError):
        GaussianMixture([])
    with pytest.raises(MixtureError):
        SharedModelMixture([0.5, -0.5], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    with pytest.raises(MixtureError):
        SharedModelMixture([0.5, 0.5], [[0.0], [1.0]], [[[1.0]]])
    with pytest.raises(MixtureError):
        GaussianMixture([GaussianComponent(1.0, np.zeros(1), np.eye(1)), GaussianComponent(1.0, np.zeros(2), np.eye(2))])
    with pytest.raises(ValueError):
        MixtureFactor(SharedModelMixture([1.0], [[0.0]], [[[1.0]]]), method="nope")


def test_shared_model_matches_component_list(rng):
    mix = random_mixture(rng, d=3, K=4)
    ref = GaussianMixture([GaussianComponent(w, m, R) for w, m, R in zip(mix.weights, mix.means, mix.covariances)])
    x = rng.standard_normal(3)
    for a, b in zip(mix.terms(real_vector(x)), ref.terms(real_vector(x))):
        np.testing.assert_allclose(a, b, atol=1e-14)


# ---------------------------------------------------------------- dominant index


def test_dominant_index_examples():
    assert dominant_index(scalar_mixture([(1.0, 0.0)]), [3.0]) == 0
    assert dominant_index(scalar_mixture([(1.0, 0.0), (1.0, -2.0)]), [0.0]) == 0
    assert dominant_index(scalar_mixture([(1.0, 1.0), (1.0, -1.0)]), [0.0]) == 0
    assert dominant_index(scalar_mixture([(1.0, 1.0), (1.0, -1.0)]), [-0.1]) == 1


# ---------------------------------------------------------------- max-mixture


def test_max_mixture_single_component(backend):
    lin = evaluate_max_mixture(scalar_mixture([(1.0, 0.0)]), [2.0])
    np.testing.assert_allclose(lin.error, [0.0, 2.0], atol=1e-15)
    assert lin.loss == pytest.approx(2.0, abs=1e-15)
    np.testing.assert_array_equal(lin.jacobian[0], [0.0])


def test_max_mixture_equal_alphas_zero_first_row(backend, rng):
    mix = scalar_mixture([(1.0, 0.0), (1.0, 1.5)])
    for x in rng.uniform(-5, 5, 20):
        assert evaluate_max_mixture(mix, [x]).error[0] == 0.0


def test_max_mixture_loss_against_direct_max(backend, rng):
    mix = SharedModelMixture([0.3, 0.7], [[0.0], [1.0]], [[[0.5]], [[2.0]]])
    alphas = mix.weights / np.sqrt(mix.covariances[:, 0, 0])
    for x in rng.uniform(-4, 4, 50):
        f = 0.5 * (x - mix.means[:, 0]) ** 2 / mix.covariances[:, 0, 0]
        expected = -math.log(np.max(alphas * np.exp(-f))) + math.log(alphas.max())
        assert evaluate_max_mixture(mix, [x]).loss == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------- sum-mixture


def test_sum_mixture_single_component(backend):
    lin = evaluate_sum_mixture(scalar_mixture([(1.0, 0.0)]), [3.0])
    np.testing.assert_allclose(lin.error, [3.0], atol=1e-14)
    assert lin.loss == pytest.approx(4.5, abs=1e-13)


def test_sum_mixture_jacobian_vanishes_at_stationary_point(backend):
    # symmetric bimodal mixture: x = 0 is stationary
    lin = evaluate_sum_mixture(scalar_mixture([(1.0, 1.0), (1.0, -1.0)]), [0.0])
    np.testing.assert_allclose(lin.jacobian, 0.0, atol=1e-15)


def test_sum_mixture_at_exact_zero_error(backend):
    lin = evaluate_sum_mixture(scalar_mixture([(1.0, 0.0)]), [0.0])
    assert lin.error[0] == 0.0
    np.testing.assert_array_equal(lin.jacobian, [[0.0]])


# ---------------------------------------------------------------- max-sum-mixture


def test_max_sum_mixture_single_component(backend, rng):
    mix = scalar_mixture([(1.0, 0.0)])
    for x in rng.uniform(-3, 3, 10):
        lin = evaluate_max_sum_mixture(mix, [x], delta=1.0)
        assert lin.error[-1] == pytest.approx(math.sqrt(2 * math.log(2)), abs=1e-12)
        np.testing.assert_allclose(lin.jacobian[-1], 0.0, atol=1e-12)
        assert lin.error[0] == pytest.approx(x, abs=1e-14)


def test_max_sum_mixture_far_dominant_limit(backend):
    # component 0 has the largest alpha and dominates by an exponent gap > 40
    mix = SharedModelMixture([0.6, 0.4], [[0.0], [20.0]], [[[1.0]], [[1.0]]])
    lin = evaluate_max_sum_mixture(mix, [0.5], delta=1.0)
    c = 2 * 1.0 + 1.0
    assert lin.error[-1] == pytest.approx(math.sqrt(2 * math.log(c)), abs=1e-12)
    mm = evaluate_max_mixture(mix, [0.5])
    np.testing.assert_allclose(lin.error[0], mm.error[1], atol=1e-15)
    np.testing.assert_allclose(lin.jacobian[0], mm.jacobian[1], atol=1e-15)
    np.testing.assert_allclose(lin.jacobian[-1], 0.0, atol=1e-12)


def test_max_sum_mixture_rejects_nonpositive_delta():
    with pytest.raises(MixtureError):
        evaluate_max_sum_mixture(scalar_mixture([(1.0, 0.0)]), [0.0], delta=0.0)


@pytest.mark.parametrize("delta", [0.1, 1.0, 10.0])
def test_max_sum_mixture_loss_offset(backend, rng, delta):
    for _ in range(50):
        mix = random_mixture(rng, d=2, K=3)
        x = rng.uniform(-3, 3, 2)
        lin = evaluate_max_sum_mixture(mix, x, delta)
        assert lin.loss - lin.offset == pytest.approx(direct_nll(mix, x), abs=1e-10)


# ---------------------------------------------------------------- Jacobians by finite differences


@pytest.mark.parametrize("method", ["mm", "sm", "msm"])
def test_error_jacobians_match_finite_differences(backend, rng, method):
    for _ in range(30):
        mix = random_mixture(rng, d=2, K=3)
        x = real_vector(rng.uniform(-3, 3, 2))
        lin = linearize(mix, x, method)
        if method != "sm":
            # hold the dominant component fixed so the error is differentiable
            k = lin.dominant_index
            near = [dominant_index(mix, oplus(x, d)) for d in 1e-5 * np.eye(2)] + [
                dominant_index(mix, oplus(x, -d)) for d in 1e-5 * np.eye(2)
            ]
            if any(n != k for n in near):
                continue
        J_fd = fd_jacobian(lambda y: linearize(mix, y, method).error, x)
        np.testing.assert_allclose(lin.jacobian, J_fd, atol=1e-6)


def test_jacobians_on_a_manifold_state(backend, rng):
    # components observe the position of an SE(2) pose
    def position(X):
        J = np.array([[-X.translation[1], 1.0, 0.0], [X.translation[0], 0.0, 1.0]])
        return X.translation, J

    comps = [GaussianComponent(w, rng.uniform(-1, 1, 2), spd(rng, 2), position) for w in (0.2, 0.5, 0.3)]
    mix = GaussianMixture(comps)
    X = exp_map([0.3, 0.4, -0.2], "SE2")
    for method in ("sm", "msm"):
        lin = linearize(mix, X, method)
        np.testing.assert_allclose(lin.jacobian, fd_jacobian(lambda Y: linearize(mix, Y, method).error, X), atol=1e-6)
    lin = evaluate_hsm(mix, X)
    g_fd = fd_gradient(lambda Y: evaluate_hsm(mix, Y).loss, X)
    np.testing.assert_allclose(lin.jacobian.T @ lin.error, g_fd, atol=1e-6)


def test_hsm_gradient_matches_finite_differences_of_loss(backend, rng):
    for _ in range(50):
        mix = random_mixture(rng, d=3, K=4)
        x = real_vector(rng.uniform(-3, 3, 3))
        lin = evaluate_hsm(mix, x)
        g_fd = fd_gradient(lambda y: evaluate_hsm(mix, y).loss, x)
        np.testing.assert_allclose(lin.jacobian.T @ lin.error, g_fd, atol=1e-6)


# ---------------------------------------------------------------- loss offsets


@pytest.mark.parametrize("method", ["sm", "msm", "hsm"])
def test_loss_minus_offset_is_exact_nll(backend, rng, method):
    for _ in range(100):
        mix = random_mixture(rng, d=int(rng.integers(1, 4)), K=int(rng.integers(1, 5)))
        x = rng.uniform(-4, 4, mix.means.shape[1])
        lin = linearize(mix, x, method)
        assert lin.loss == pytest.approx(0.5 * lin.error @ lin.error, abs=1e-12)
        assert lin.loss - lin.offset == pytest.approx(direct_nll(mix, x), abs=1e-9)


@pytest.mark.parametrize("method", METHODS)
def test_loss_differences_track_nll_differences(backend, rng, method):
    for _ in range(100):
        mix = random_mixture(rng, d=2, K=3)
        x = rng.uniform(-3, 3, 2)
        y = x + rng.normal(0, 0.3, 2)
        if method == "mm" and dominant_index(mix, x) != dominant_index(mix, y):
            continue
        d_loss = linearize(mix, y, method).loss - linearize(mix, x, method).loss
        if method == "mm":
            k = dominant_index(mix, x)
            comp = mix.components[k]
            ex, ey = comp.error(x)[0], comp.error(y)[0]
            d_ref = 0.5 * (ey @ ey - ex @ ex)
        else:
            d_ref = direct_nll(mix, y) - direct_nll(mix, x)
        assert d_loss == pytest.approx(d_ref, abs=1e-9)


def test_prescaling_keeps_huge_alpha_ratios_finite(backend):
    # raw alphas spanning 1e-6 .. 1e6 would overflow the HSM constant
    mix = SharedModelMixture([0.5, 0.5], [[0.0], [1.0]], [[[1e-12]], [[1e12]]])
    ref = direct_nll(mix, [0.3])
    for method in METHODS:
        lin = linearize(mix, [0.3], method)
        assert np.all(np.isfinite(lin.error)) and np.isfinite(lin.loss)
        if method in ("sm", "msm"):
            assert lin.loss - lin.offset == pytest.approx(ref, rel=1e-12)
    # the HSM constant grows like sum(alpha) / min(alpha) = 1e12, so its loss
    # only resolves to a few ulps of that magnitude
    lin = evaluate_hsm(mix, [0.3])
    assert abs(lin.loss - lin.offset - ref) <= 4 * np.spacing(lin.loss)
    np.testing.assert_allclose(lin.jacobian.T @ lin.error, fd_gradient(lambda y: nll(mix, y), real_vector([0.3])), atol=1e-9)


# ---------------------------------------------------------------- HSM weights and Hessian


def test_hsm_weight_examples(backend):
    np.testing.assert_array_equal(hsm_weights(scalar_mixture([(1.0, 0.0)]), [0.7]), [1.0])
    np.testing.assert_allclose(hsm_weights(scalar_mixture([(1.0, 1.0), (1.0, -1.0)]), [0.0]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(hsm_weights(scalar_mixture([(2.0, 0.0), (1.0, 0.0)]), [0.0]), [2 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    log_s=st.floats(-20, 20),
)
def test_hsm_weights_scale_invariant(seed, log_s):
    rng = np.random.default_rng(seed)
    mix = random_mixture(rng, d=2, K=4)
    scaled = SharedModelMixture(mix.weights * math.exp(log_s), mix.means, mix.covariances)
    x = rng.uniform(-3, 3, 2)
    w = hsm_weights(mix, x)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all((w >= 0) & (w <= 1))
    np.testing.assert_allclose(hsm_weights(scaled, x), w, atol=1e-12)
    # the descent direction is unchanged as well
    a, b = evaluate_hsm(mix, x), evaluate_hsm(scaled, x)
    step_a = np.linalg.solve(a.hessian, a.jacobian.T @ a.error)
    step_b = np.linalg.solve(b.hessian, b.jacobian.T @ b.error)
    np.testing.assert_allclose(step_b, step_a, atol=1e-9)


def test_hsm_hessian_single_component(backend, rng):
    R = spd(rng, 3)
    mix = SharedModelMixture([1.0], [np.zeros(3)], [R])
    np.testing.assert_allclose(hsm_hessian(mix, rng.standard_normal(3)), np.linalg.inv(R), atol=1e-12)


def test_hsm_hessian_is_weighted_sum(backend, rng):
    for _ in range(20):
        mix = random_mixture(rng, d=2, K=3)
        x = rng.uniform(-3, 3, 2)
        w = hsm_weights(mix, x)
        ref = sum(wk * np.linalg.inv(R) for wk, R in zip(w, mix.covariances))
        np.testing.assert_allclose(hsm_hessian(mix, x), ref, atol=1e-12)


def test_hsm_gauss_newton_product_is_hessian(backend, rng):
    for _ in range(50):
        mix = random_mixture(rng, d=3, K=4)
        lin = evaluate_hsm(mix, rng.uniform(-3, 3, 3))
        np.testing.assert_allclose(lin.jacobian.T @ lin.jacobian, lin.hessian, atol=1e-12)
        np.testing.assert_array_equal(lin.jacobian[-1], 0.0)


# ---------------------------------------------------------------- HSM loss gap and constant


def test_delta_j_single_unit_component(backend):
    assert hsm_delta_j(scalar_mixture([(1.0, 0.0)]), [1.3]) == pytest.approx(0.0, abs=1e-15)


def test_delta_j_two_routes_agree(backend, rng):
    for _ in range(200):
        mix = random_mixture(rng, d=2, K=2)
        x = rng.uniform(-4, 4, 2)
        la, E, _ = mix.terms(real_vector(x))
        f = 0.5 * np.einsum("ki,ki->k", E, E)
        assert hsm_delta_j(mix, x) == pytest.approx(delta_j_from_exponents(la, f), abs=1e-9)


def test_delta_j_lower_bound_fuzz(rng):
    for _ in range(10_000):
        K = int(rng.integers(1, 6))
        la = rng.uniform(-5, 5, K)
        f = rng.exponential(rng.uniform(0.01, 30.0), K)
        assert delta_j_from_exponents(la, f) + hsm_normalization_constant(np.exp(la)) >= 0.0


def test_normalization_constant_examples(backend):
    assert hsm_normalization_constant([1.0]) == pytest.approx(1.0, abs=1e-15)
    assert hsm_normalization_constant([1.0, 1.0]) == pytest.approx(2 + math.log(2), abs=1e-15)


def test_normalization_constant_extended_precision(backend):
    mpmath.mp.dps = 50
    a = [mpmath.mpf("0.5"), mpmath.mpf(2)]
    s = sum(a)
    ref = mpmath.log(sum(ak * mpmath.exp(s / ak) for ak in a))
    assert hsm_normalization_constant([0.5, 2.0]) == pytest.approx(float(ref), abs=1e-12)


def test_normalization_constant_large_ratio_no_overflow(backend):
    # sum(alpha) / min(alpha) = 700; exp(700) is near the float limit
    alphas = np.array([1.0, 699.0])
    mpmath.mp.dps = 50
    ref = mpmath.log(sum(mpmath.mpf(a) * mpmath.exp(mpmath.mpf(700) / mpmath.mpf(a)) for a in alphas))
    assert hsm_normalization_constant(alphas) == pytest.approx(float(ref), rel=1e-14)
    # far beyond the naive overflow limit the log-domain route stays finite
    assert np.isfinite(hsm_normalization_constant([1e-6, 1.0]))


def test_normalization_constant_rejects_nonpositive():
    with pytest.raises(MixtureError):
        hsm_normalization_constant([1.0, 0.0])


def test_hsm_single_component_example(backend):
    lin = evaluate_hsm(scalar_mixture([(1.0, 0.0)]), [1.0])
    np.testing.assert_allclose(lin.error, [1.0, math.sqrt(2.0)], atol=1e-15)
    assert lin.loss == pytest.approx(1.5, abs=1e-15)


def test_hsm_norm_equals_nll_plus_constant(backend, rng):
    for _ in range(100):
        mix = random_mixture(rng, d=2, K=3)
        x = rng.uniform(-4, 4, 2)
        lin = evaluate_hsm(mix, x)
        alphas = mix.weights / np.sqrt(np.linalg.det(mix.covariances))
        assert 0.5 * lin.error @ lin.error == pytest.approx(direct_nll(mix, x) + hsm_normalization_constant(alphas), abs=1e-9)


# ---------------------------------------------------------------- rank and clamping


def test_sum_mixture_gauss_newton_hessian_rank_one(backend, rng):
    for d in (2, 3, 5):
        mix = random_mixture(rng, d=d, K=3)
        J = evaluate_sum_mixture(mix, rng.uniform(-2, 2, d)).jacobian
        sv = np.linalg.svd(J.T @ J, compute_uv=False)
        assert sv[1] < 1e-10 * sv[0]


def test_tiny_negative_sqrt_argument_is_clamped():
    before = mixtures.clamp_events
    assert mixtures._check_sqrt_arg(-1e-14, "test") is True
    assert mixtures.clamp_events == before + 1
    assert mixtures._check_sqrt_arg(0.0, "test") is False


def test_negative_sqrt_argument_raises():
    with pytest.raises(MixtureConsistencyError):
        mixtures._check_sqrt_arg(-1e-6, "test")


def test_unknown_method_raises():
    with pytest.raises(ValueError):
        linearize(scalar_mixture([(1.0, 0.0)]), [0.0], "em")


# ---------------------------------------------------------------- backend parity


@pytest.mark.skipif("cython" not in _backend.available(), reason="compiled kernels not built")
def test_compiled_kernels_match_numpy(rng):
    from gmmnls import _kernels

    for _ in range(200):
        K, m, n = (int(v) for v in rng.integers(1, 6, 3))
        la = np.ascontiguousarray(rng.uniform(-5, 0, K))
        E = np.ascontiguousarray(rng.normal(0, 3, (K, m)))
        Jc = np.ascontiguousarray(rng.normal(0, 1, (K, m, n)))
        L = np.ascontiguousarray(rng.normal(0, 1, (K, m, m)))
        for a, b in zip(_kernels.whiten(L, E, Jc), _kernels_py.whiten(L, E, Jc)):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
        f = 0.5 * np.einsum("ki,ki->k", E, E)
        for a, b in zip(_kernels.softmin(la, f), _kernels_py.softmin(la, f)):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)
        assert _kernels.hsm_constant(la) == pytest.approx(_kernels_py.hsm_constant(la), rel=1e-13)
        for name, args in [
            ("max_mixture", (la, E, Jc)),
            ("sum_mixture", (la, E, Jc)),
            ("max_sum_mixture", (la, E, Jc, 1.0)),
            ("hessian_sum_mixture", (la, E, Jc)),
        ]:
            for a, b in zip(getattr(_kernels, name)(*args), getattr(_kernels_py, name)(*args)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
