"""Kernel and exact-GP tests against dense linear-algebra oracles."""

import math

import numpy as np
import pytest

from softsense import autodiff as ad
from softsense.gp import (
    JITTER_LADDER,
    KernelSpec,
    chol_with_jitter,
    kernel_graph,
    kernel_matrix,
    posterior,
)
from softsense.regress import ArrayDataset, gp_fit, gp_predict, train


def spec(sv=1.0, ell=1.0, noise=1e-6):
    return KernelSpec(
        log_signal=math.log(sv),
        log_lengthscales=np.array([math.log(ell)]),
        log_noise=math.log(noise),
    )


def test_kernel_identical_points_equal_signal_variance():
    s = spec(sv=2.5)
    a = np.array([[0.3, -1.2, 0.7]])
    K = kernel_matrix(a, a, s)
    assert K[0, 0] == 2.5  # exact, no roundoff through the distance


def test_kernel_vanishes_at_distance():
    s = spec()
    K = kernel_matrix(np.array([[0.0]]), np.array([[50.0]]), s)
    assert K[0, 0] < 1e-300 or K[0, 0] == 0.0


def test_kernel_elementwise_oracle():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(3, 2))
    B = rng.normal(size=(3, 2))
    s = spec(sv=1.7, ell=0.8)
    K = kernel_matrix(A, B, s)
    for i in range(3):
        for j in range(3):
            d2 = sum((A[i, d] - B[j, d]) ** 2 for d in range(2))
            expected = 1.7 * math.exp(-0.5 * d2 / 0.8**2)
            assert K[i, j] == pytest.approx(expected, abs=1e-14)


def test_kernel_ard_lengthscales():
    s = KernelSpec(0.0, np.log(np.array([1.0, 10.0])), 0.0)
    K = kernel_matrix(np.array([[0.0, 0.0]]), np.array([[0.0, 10.0]]), s)
    assert K[0, 0] == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        kernel_matrix(np.ones((2, 3)), np.ones((2, 2)), spec())


def test_kernel_graph_matches_value_path():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(5, 3))
    B = rng.normal(size=(4, 3))
    s = spec(sv=0.9, ell=1.3)
    K_graph = kernel_graph(
        ad.constant(A),
        ad.constant(B),
        ad.constant(np.array(s.log_signal)),
        ad.constant(s.log_lengthscales),
    )
    np.testing.assert_allclose(K_graph.value, kernel_matrix(A, B, s), atol=1e-12)


# ---------------------------------------------------------------------------
# Posterior vs. dense-inversion oracle
# ---------------------------------------------------------------------------


def dense_posterior_oracle(X, y, Xq, s):
    """Textbook GP posterior through an explicit matrix inverse.

    Includes the same base jitter the Cholesky path applies so the two
    algorithms factor the identical covariance.
    """
    K = kernel_matrix(X, X, s) + (s.noise_var + JITTER_LADDER[0]) * np.eye(len(X))
    K_inv = np.linalg.inv(K)
    k_star = kernel_matrix(X, Xq, s)
    mean = k_star.T @ K_inv @ y
    var = np.array(
        [s.signal_var - k_star[:, j] @ K_inv @ k_star[:, j] for j in range(len(Xq))]
    )
    return mean, np.maximum(var, 0.0) + s.noise_var


def test_posterior_matches_dense_oracle():
    rng = np.random.default_rng(8)
    for trial in range(5):
        n = rng.integers(4, 11)
        X = rng.normal(size=(n, 3))
        y = rng.normal(size=n)
        s = spec(
            sv=rng.uniform(0.5, 2), ell=rng.uniform(0.7, 2), noise=10 ** rng.uniform(-3, -1.3)
        )
        Xq = rng.normal(size=(100, 3))
        mean, var = posterior(X, y, Xq, s)
        mean_o, var_o = dense_posterior_oracle(X, y, Xq, s)
        np.testing.assert_allclose(mean, mean_o, atol=1e-10)
        np.testing.assert_allclose(var, var_o, atol=1e-10)


def test_posterior_interpolates_noise_free_data():
    rng = np.random.default_rng(9)
    X = rng.uniform(-2, 2, size=(8, 1))
    s = spec(sv=1.0, ell=1.0, noise=1e-12)
    # noise-free draws from the kernel itself: exact interpolation expected
    K = kernel_matrix(X, X, s)
    L = np.linalg.cholesky(K + 1e-12 * np.eye(8))
    y = L @ rng.normal(size=8)
    mean, var = posterior(X, y, X, s)
    np.testing.assert_allclose(mean, y, atol=1e-6)
    assert np.all(var < 1e-9)


def test_prior_reversion_far_from_data():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(6, 2))
    y = rng.normal(size=6)
    s = spec(sv=1.3, noise=0.01)
    mean, var = posterior(X, y, X + 100.0, s)
    np.testing.assert_allclose(mean, 0.0, atol=1e-12)
    np.testing.assert_allclose(var, 1.3 + 0.01, atol=1e-12)


def test_batch_equals_pointwise():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(7, 2))
    y = rng.normal(size=7)
    s = spec(noise=1e-4)
    Xq = rng.normal(size=(9, 2))
    mean_b, var_b = posterior(X, y, Xq, s)
    for j in range(9):
        m1, v1 = posterior(X, y, Xq[j : j + 1], s)
        assert m1[0] == pytest.approx(mean_b[j], abs=1e-12)
        assert v1[0] == pytest.approx(var_b[j], abs=1e-12)


# ---------------------------------------------------------------------------
# Jitter ladder
# ---------------------------------------------------------------------------


def test_jitter_escalation_on_near_singular_matrix():
    # rank-1 matrix shifted slightly indefinite: eigenvalues (3 - 1e-5,
    # -1e-5, -1e-5); only the largest ladder rung (1e-4) can fix it
    bad = np.ones((3, 3)) - 1e-5 * np.eye(3)
    factor, jitter, idx = chol_with_jitter(bad)
    assert jitter == JITTER_LADDER[-1]
    assert idx == len(JITTER_LADDER) - 1


def test_duplicated_conflicting_points_still_fit():
    # identical inputs, conflicting labels, essentially zero noise floor
    X = np.array([[0.5], [0.5], [1.5]])
    y = np.array([0.0, 1.0, 0.3])
    model = gp_fit(X, y, n_starts=2, seed=0, max_iters=50)
    mean, var = gp_predict(model, X)
    assert np.all(np.isfinite(mean)) and np.all(var >= 0)


def test_gp_fit_prediction_quality():
    rng = np.random.default_rng(12)
    X = rng.uniform(-3, 3, size=(30, 1))
    y = np.sin(X[:, 0])
    model = gp_fit(X, y, n_starts=3, seed=1, max_iters=400)
    Xq = np.linspace(-2.5, 2.5, 50)[:, None]
    mean, _ = model.predict(Xq)
    assert np.sqrt(np.mean((mean - np.sin(Xq[:, 0])) ** 2)) < 0.05


def test_train_gp_ignores_alpha_and_net():
    rng = np.random.default_rng(13)
    X = rng.uniform(0, 1, size=(12, 2))
    y = X[:, 0] * 0.5 + 0.2
    ds = ArrayDataset(X, y)
    m1, _ = train("GP", ds, alpha=123.0, restarts=2, seed=5, max_iters=100)
    m2, _ = train("GP", ds, alpha=None, restarts=2, seed=5, max_iters=100)
    assert m1.net is None and m1.alpha is None
    assert m1.kernel.flat().tolist() == m2.kernel.flat().tolist()


def test_kernel_spec_flat_roundtrip():
    s = KernelSpec(0.3, np.array([0.1, -0.2]), -1.5)
    back = KernelSpec.from_flat(s.flat())
    assert back.log_signal == s.log_signal
    assert back.log_noise == s.log_noise
    np.testing.assert_array_equal(back.log_lengthscales, s.log_lengthscales)


def test_cholesky_cache_consistency():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(10, 2))
    y = rng.normal(size=10)
    model = gp_fit(X, y, n_starts=2, seed=3, max_iters=100)
    model.predict(X)  # materializes the cached factor
    K = model.train_covariance()
    L = np.tril(model._chol[0])
    np.testing.assert_allclose(L @ L.T, K, atol=1e-10)
