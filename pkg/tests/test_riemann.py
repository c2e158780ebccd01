import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from vdmn.riemann import (
    ConditioningError,
    GaussianStiffness,
    GeometryError,
    cov_to_tangent_basis,
    exp_map,
    gaussian_nll,
    gaussian_nll_jax,
    log_map,
    log_map_jax,
    tangent_basis_to_cov,
    unvec,
    vec,
)


def spd(rng, scale=1.0):
    A = rng.standard_normal((3, 3))
    return scale * (A @ A.T + 0.3 * np.eye(3))


def test_vec_roundtrip():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    S = A + A.T
    np.testing.assert_array_equal(unvec(vec(S)), S)
    np.testing.assert_array_equal(vec(S), [S[0, 0], S[1, 1], S[2, 2], S[0, 1], S[0, 2], S[1, 2]])


def test_log_map_trivial():
    rng = np.random.default_rng(1)
    A = spd(rng)
    np.testing.assert_allclose(log_map(A, A), np.zeros((3, 3)), atol=1e-13)
    np.testing.assert_allclose(log_map(np.eye(3), np.diag([np.e, 1, 1])), np.diag([1.0, 0, 0]), atol=1e-14)
    np.testing.assert_allclose(exp_map(np.eye(3), np.diag([1.0, 0, 0])), np.diag([np.e, 1, 1]), rtol=1e-14)
    np.testing.assert_allclose(exp_map(A, np.zeros((3, 3))), A, rtol=1e-12)


def test_exp_log_roundtrip_1000_pairs():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        A, B = spd(rng), spd(rng)
        V = log_map(A, B)
        np.testing.assert_allclose(V, V.T, atol=1e-14)
        np.testing.assert_allclose(exp_map(A, V), B, rtol=1e-10, atol=1e-10 * np.abs(B).max())
        np.testing.assert_allclose(log_map(A, exp_map(A, V)), V, rtol=1e-10, atol=1e-10 * np.abs(V).max())


def test_log_map_affine_invariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        A, B = spd(rng), spd(rng)
        a = rng.uniform(0.1, 10)
        np.testing.assert_allclose(log_map(a * A, a * B), a * log_map(A, B), rtol=1e-10, atol=1e-12)


def test_log_map_rejects_non_pd():
    with pytest.raises(GeometryError) as exc:
        log_map(np.diag([1.0, 1.0, -1.0]), np.eye(3))
    assert exc.value.eigenvalue == pytest.approx(-1.0)
    with pytest.raises(GeometryError):
        log_map(np.eye(3), np.diag([1.0, 0.0, 1.0]))


def test_log_map_jax_matches_numpy_and_has_finite_gradient_at_repeated_eigs():
    rng = np.random.default_rng(4)
    A, B = spd(rng), spd(rng)
    np.testing.assert_allclose(np.asarray(log_map_jax(jnp.asarray(A), jnp.asarray(B))), log_map(A, B), rtol=1e-11)
    # identical arguments give repeated eigenvalues (all ones) inside the log
    g = jax.grad(lambda b: jnp.sum(log_map_jax(jnp.asarray(A), b) ** 2))(jnp.asarray(A))
    assert np.all(np.isfinite(np.asarray(g)))
    f = lambda m: jnp.sum(log_map_jax(m, jnp.asarray(B)) ** 2)
    g = np.asarray(jax.grad(f)(jnp.eye(3) * 2.0))
    assert np.all(np.isfinite(g))


def test_log_map_jax_derivative_matches_finite_difference():
    rng = np.random.default_rng(5)
    A, B = spd(rng), spd(rng)
    D = rng.standard_normal((3, 3))
    D = D + D.T
    _, jvp = jax.jvp(lambda b: log_map_jax(jnp.asarray(A), b), (jnp.asarray(B),), (jnp.asarray(D),))
    h = 1e-6
    fd = (log_map(A, B + h * D) - log_map(A, B - h * D)) / (2 * h)
    np.testing.assert_allclose(np.asarray(jvp), fd, rtol=1e-6, atol=1e-8)
    _, jvp = jax.jvp(lambda a: log_map_jax(a, jnp.asarray(B)), (jnp.asarray(A),), (jnp.asarray(D),))
    fd = (log_map(A + h * D, B) - log_map(A - h * D, B)) / (2 * h)
    np.testing.assert_allclose(np.asarray(jvp), fd, rtol=1e-6, atol=1e-8)


def _full_symmetric_tensor(rng):
    M = rng.standard_normal((6, 6))
    return tangent_basis_to_cov(M + M.T)


def test_cov_to_tangent_basis_examples():
    np.testing.assert_array_equal(cov_to_tangent_basis(np.zeros((3, 3, 3, 3))), np.zeros((6, 6)))
    d = np.eye(3)
    S = 0.5 * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
    np.testing.assert_allclose(cov_to_tangent_basis(S), np.diag([1, 1, 1, 0.5, 0.5, 0.5]), atol=1e-15)


def test_cov_to_tangent_basis_roundtrip_and_quadratic_form():
    rng = np.random.default_rng(6)
    for _ in range(20):
        S = _full_symmetric_tensor(rng)
        M = cov_to_tangent_basis(S)
        np.testing.assert_array_equal(tangent_basis_to_cov(M), S)
        v = rng.standard_normal(6)
        # coordinate vector v corresponds to V with off-diagonal entries v_p / 2
        V = unvec(v * np.array([1, 1, 1, 0.5, 0.5, 0.5]))
        np.testing.assert_allclose(v @ M @ v, np.einsum("ijkl,ij,kl->", S, V, V), rtol=1e-12)


def test_cov_to_tangent_basis_rejects_asymmetric():
    rng = np.random.default_rng(7)
    S = _full_symmetric_tensor(rng)
    S[0, 1, 2, 2] += 1.0
    with pytest.raises(ValueError):
        cov_to_tangent_basis(S)


def test_gaussian_nll_at_mean_isotropic():
    rng = np.random.default_rng(8)
    A = spd(rng)
    s2 = 0.37
    g = GaussianStiffness(A, s2 * np.eye(6))
    expected = 0.5 * (6 * np.log(2 * np.pi) + 6 * np.log(s2 * (1 + 1e-10)))
    for mode in ("riemannian", "euclidean"):
        assert gaussian_nll(g, A, mode) == pytest.approx(expected, rel=1e-12)


def test_gaussian_nll_matches_direct_density():
    A = np.diag([3.0, 2.0, 1.0])
    cov = np.diag(np.arange(1.0, 7.0))
    C = A + np.diag([0.01, 0, 0])
    r = vec(log_map(A, C))
    d = 6
    jittered = cov + 1e-10 * np.trace(cov) / d * np.eye(d)
    ref = -multivariate_normal(np.zeros(6), jittered).logpdf(r)
    assert gaussian_nll(GaussianStiffness(A, cov), C) == pytest.approx(ref, rel=1e-12)
    ref = -multivariate_normal(np.zeros(6), jittered).logpdf(vec(C - A))
    assert gaussian_nll(GaussianStiffness(A, cov), C, "euclidean") == pytest.approx(ref, rel=1e-12)


def test_riemannian_and_euclidean_agree_to_first_order():
    rng = np.random.default_rng(9)
    A = spd(rng)
    D = rng.standard_normal((3, 3))
    D = D + D.T
    g = GaussianStiffness(A, np.eye(6))
    diffs = []
    for eps in (1e-2, 1e-3):
        C = A + eps * D
        diffs.append(abs(gaussian_nll(g, C) - gaussian_nll(g, C, "euclidean")))
    # residual quadratic form differs at O(eps^3) for unit covariance; well below O(eps^2)
    assert diffs[1] < diffs[0] / 50


def test_gaussian_nll_minimized_at_mean():
    rng = np.random.default_rng(10)
    A = spd(rng)
    M = rng.standard_normal((6, 6))
    g = GaussianStiffness(A, M @ M.T + np.eye(6))
    base = gaussian_nll(g, A)
    for _ in range(12):
        D = rng.standard_normal((3, 3))
        D = 1e-3 * (D + D.T)
        assert gaussian_nll(g, exp_map(A, D)) > base


def test_gaussian_nll_conditioning_and_mode_errors():
    g = GaussianStiffness(np.eye(3), -np.eye(6))
    with pytest.raises(ConditioningError):
        gaussian_nll(g, np.eye(3))
    with pytest.raises(ValueError):
        gaussian_nll(GaussianStiffness(np.eye(3), np.eye(6)), np.eye(3), "manhattan")


def test_gaussian_nll_jax_matches_numpy():
    rng = np.random.default_rng(11)
    A, B = spd(rng), spd(rng)
    M = rng.standard_normal((6, 6))
    cov = M @ M.T + 0.1 * np.eye(6)
    for mode in ("riemannian", "euclidean"):
        v = float(gaussian_nll_jax(jnp.asarray(A), jnp.asarray(cov), jnp.asarray(B), mode))
        assert v == pytest.approx(gaussian_nll(GaussianStiffness(A, cov), B, mode), rel=1e-11)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_log_map_is_symmetric_property(seed, scale):
    rng = np.random.default_rng(seed)
    V = log_map(spd(rng, scale), spd(rng, scale))
    np.testing.assert_allclose(V, V.T, atol=1e-12 * max(1.0, np.abs(V).max()))
