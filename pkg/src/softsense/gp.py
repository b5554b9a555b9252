"""Exact Gaussian-process machinery: squared-exponential kernel, Cholesky
marginal likelihood, and posterior prediction.

Hyperparameters are kept as unconstrained log-parameters.  The same graph
builders serve the plain GP (kernel on raw features) and the deep-kernel
models (kernel on network outputs); gradients come from the reverse-mode
engine in :mod:`softsense.autodiff`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import autodiff as ad

__all__ = [
    "JITTER_LADDER",
    "KernelSpec",
    "kernel_matrix",
    "kernel_graph",
    "gp_nll_graph",
    "variance_sum_graph",
    "chol_with_jitter",
    "posterior",
]

# Escalation ladder for the diagonal jitter added before factorization.
JITTER_LADDER = (1e-10, 1e-8, 1e-6, 1e-4)

LOG2PI = math.log(2.0 * math.pi)


@dataclass
class KernelSpec:
    """Squared-exponential kernel + observation noise, in log space.

    ``log_lengthscales`` has one entry (isotropic) or one per input
    dimension (ARD).
    """

    log_signal: float = 0.0
    log_lengthscales: np.ndarray = field(default_factory=lambda: np.zeros(1))
    log_noise: float = 0.0

    def __post_init__(self):
        self.log_lengthscales = np.atleast_1d(
            np.asarray(self.log_lengthscales, dtype=float)
        )

    @property
    def signal_var(self) -> float:
        return math.exp(self.log_signal)

    @property
    def noise_var(self) -> float:
        return math.exp(self.log_noise)

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    def flat(self) -> np.ndarray:
        return np.concatenate(([self.log_signal], self.log_lengthscales, [self.log_noise]))

    @staticmethod
    def from_flat(theta: np.ndarray) -> "KernelSpec":
        theta = np.asarray(theta, dtype=float)
        return KernelSpec(
            log_signal=float(theta[0]),
            log_lengthscales=theta[1:-1].copy(),
            log_noise=float(theta[-1]),
        )


def _scaled(X: np.ndarray, spec: KernelSpec) -> np.ndarray:
    ell = spec.lengthscales
    if ell.size not in (1, X.shape[1]):
        raise ValueError(
            f"kernel has {ell.size} lengthscales for {X.shape[1]}-dimensional inputs"
        )
    return X / ell


def kernel_matrix(A: np.ndarray, B: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """K[i, j] = signal_var * exp(-0.5 * sum_d (a_id - b_jd)^2 / ell_d^2)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"input dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    from scipy.spatial.distance import cdist

    d2 = cdist(_scaled(A, spec), _scaled(B, spec), metric="sqeuclidean")
    return spec.signal_var * np.exp(-0.5 * d2)


# ---------------------------------------------------------------------------
# Graph builders (differentiable paths)
# ---------------------------------------------------------------------------


def kernel_graph(
    A: ad.Tensor, B: ad.Tensor, log_signal: ad.Tensor, log_ell: ad.Tensor
) -> ad.Tensor:
    """Differentiable SE kernel between tensor inputs.

    ``log_ell`` has shape (1,) (isotropic) or (d,) (ARD); it broadcasts over
    input columns.
    """
    inv_ell = ad.exp(-log_ell)
    d2 = ad.pairwise_sqdist(A * inv_ell, B * inv_ell)
    return ad.exp(log_signal) * ad.exp(-0.5 * d2)


def gp_nll_graph(
    K: ad.Tensor, y: np.ndarray
) -> ad.Tensor:
    """Negative log marginal likelihood -log p(y | K) for zero-mean data.

    ``K`` must already include the noise (and jitter) diagonal.
    """
    m = y.shape[0]
    y_col = ad.constant(y.reshape(-1, 1))
    alpha = ad.psd_solve(K, y_col)
    quad = (y_col * alpha).sum()
    return 0.5 * quad + 0.5 * ad.logdet_psd(K) + 0.5 * m * LOG2PI


def variance_sum_graph(
    K: ad.Tensor, K_star: ad.Tensor, log_signal: ad.Tensor
) -> ad.Tensor:
    """Sum over query points of the latent posterior variance.

    ``K_star`` is the (train x query) cross-covariance; the prior variance
    of the SE kernel at a point is the signal variance.  Values are floored
    at zero: tiny negative explained-variance overshoots must not produce a
    negative penalty.
    """
    n_query = K_star.shape[1]
    S = ad.psd_solve(K, K_star)
    explained = (K_star * S).sum(axis=0)
    var = ad.exp(log_signal) * ad.constant(np.ones(n_query)) - explained
    return ad.clip_min(var, 0.0).sum()


# ---------------------------------------------------------------------------
# Value-space helpers (prediction path, no graph)
# ---------------------------------------------------------------------------


def chol_with_jitter(K: np.ndarray, base_jitter_idx: int = 0):
    """Cholesky of K + jitter*I, escalating through the jitter ladder.

    Returns (cho_factor result, jitter used, ladder index).  Raises the last
    numpy error if even the largest jitter fails.
    """
    n = K.shape[0]
    last_err: Exception | None = None
    for idx in range(base_jitter_idx, len(JITTER_LADDER)):
        jitter = JITTER_LADDER[idx]
        try:
            factor = cho_factor(K + jitter * np.eye(n), lower=True, check_finite=False)
            return factor, jitter, idx
        except np.linalg.LinAlgError as err:  # pragma: no cover - rare path
            last_err = err
    raise ad.CholeskyError(
        f"Cholesky failed after jitter escalation to {JITTER_LADDER[-1]}: {last_err}"
    )


def posterior(
    Z_train: np.ndarray,
    y_train: np.ndarray,
    Z_query: np.ndarray,
    spec: KernelSpec,
    chol=None,
    include_noise: bool = True,
):
    """Exact GP posterior mean and variance at query points.

    Variance is the latent variance floored at zero, plus the observation
    noise when ``include_noise`` (the predictive variance of a new
    measurement).  Pass a cached ``chol`` (from :func:`chol_with_jitter` on
    the training covariance) to skip refactorization.
    """
    if chol is None:
        K = kernel_matrix(Z_train, Z_train, spec) + spec.noise_var * np.eye(len(Z_train))
        chol, _, _ = chol_with_jitter(K)
    K_star = kernel_matrix(Z_train, Z_query, spec)
    alpha = cho_solve(chol, y_train, check_finite=False)
    mean = K_star.T @ alpha
    S = cho_solve(chol, K_star, check_finite=False)
    explained = np.einsum("ij,ij->j", K_star, S)
    var = np.maximum(spec.signal_var - explained, 0.0)
    if include_noise:
        var = var + spec.noise_var
    return mean, var
