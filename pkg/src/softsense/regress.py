"""Regression stack: exact GP, deep kernel learning, and semi-supervised DKL.

The semi-supervised objective combines the labeled negative log marginal
likelihood with an alpha-weighted sum of posterior predictive variances over
an unlabeled batch, each term averaged per point:

    L = L_likelihood / m  +  alpha * L_variance / n

where m counts labeled and n unlabeled points in the evaluation (both are
recorded on the loss parts so either normalization convention can be
recovered).  With alpha = 0 the objective, gradients and optimizer path are
exactly the deep-kernel-learning objective: DKL is SSDKL at alpha 0, bit for
bit.

Training runs multiple restarts of full-batch adaptive-moment gradient
descent with step-halving acceptance (the recorded loss sequence is
nonincreasing); the restart with the lowest validation RMSE wins.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .gp import (
    JITTER_LADDER,
    KernelSpec,
    chol_with_jitter,
    gp_nll_graph,
    kernel_graph,
    kernel_matrix,
    posterior,
    variance_sum_graph,
)

__all__ = [
    "FeatureNet",
    "SemisupLossParts",
    "RegressorModel",
    "TrainError",
    "DeepKernelObjective",
    "GpObjective",
    "Adam",
    "feature_forward",
    "semisup_loss",
    "loss_gradient",
    "train",
    "gp_fit",
    "gp_predict",
    "save_model",
    "ArrayDataset",
    "load_model",
]

# Seed-stream tags (derivation of all randomness from one master seed).
_TAG_VAL_SPLIT = 21
_TAG_INIT = 22
_TAG_BATCH = 23

DEFAULT_LAYER_DIMS = (64, 16, 8)


class TrainError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Feature network
# ---------------------------------------------------------------------------


@dataclass
class FeatureNet:
    """Two-hidden-layer tanh network with a linear output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ValueError("feature net has exactly two hidden layers plus output")
        for i in range(2):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError("layer shapes do not chain")
        for W, b in zip(self.weights, self.biases):
            if W.shape[1] != b.shape[0]:
                raise ValueError("bias shape does not match layer width")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite network parameters")

    @property
    def latent_dim(self) -> int:
        return self.weights[-1].shape[1]

    @staticmethod
    def init(rng: np.random.Generator, in_dim: int, layer_dims=DEFAULT_LAYER_DIMS):
        """Zero-mean init scaled by fan-in."""
        dims = (in_dim, *layer_dims)
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return FeatureNet(weights, biases)

    def forward(self, X: np.ndarray) -> np.ndarray:
        h = np.asarray(X, dtype=float)
        for i in range(2):
            h = np.tanh(h @ self.weights[i] + self.biases[i])
        return h @ self.weights[2] + self.biases[2]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    @staticmethod
    def from_params(params: list[np.ndarray]) -> "FeatureNet":
        return FeatureNet(
            weights=[params[0], params[2], params[4]],
            biases=[params[1], params[3], params[5]],
        )


def feature_forward(net: FeatureNet, X: np.ndarray) -> np.ndarray:
    """Latent features for raw inputs (value path)."""
    return net.forward(X)


def _net_graph(theta: list[ad.Tensor], X: ad.Tensor) -> ad.Tensor:
    h = ad.tanh(X @ theta[0] + theta[1])
    h = ad.tanh(h @ theta[2] + theta[3])
    return h @ theta[4] + theta[5]


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


@dataclass
class SemisupLossParts:
    """Decomposed semi-supervised loss at one parameter point."""

    l_likelihood: float
    l_variance: float
    alpha: float
    m: int
    n: int
    total: float

    def __post_init__(self):
        if self.l_variance < 0:
            raise ValueError("variance penalty must be nonnegative")
        expected = self.l_likelihood / self.m
        if self.n:
            expected = expected + self.l_variance * self.alpha / self.n
        if expected != self.total:
            raise ValueError("combined loss does not match the weighted formula")


class _Objective:
    """Shared machinery: jitter escalation, loss/grad evaluation."""

    def __init__(self):
        self.jitter_idx = 0

    def _build(self, params: list[np.ndarray], with_variance: bool):
        raise NotImplementedError

    def value(self, params: list[np.ndarray]):
        loss, parts, _ = self._evaluate(params, want_grad=False)
        return loss, parts

    def value_and_grad(self, params: list[np.ndarray]):
        return self._evaluate(params, want_grad=True)

    def _evaluate(self, params: list[np.ndarray], want_grad: bool):
        while True:
            try:
                theta = [ad.parameter(p) for p in params]
                loss, parts = self._build(theta, JITTER_LADDER[self.jitter_idx])
                break
            except ad.CholeskyError:
                if self.jitter_idx + 1 >= len(JITTER_LADDER):
                    raise
                self.jitter_idx += 1
        grads = None
        if want_grad:
            ad.backward(loss)
            grads = [t.grad for t in theta]
            for name, g in zip(self.param_names(), grads):
                if not np.all(np.isfinite(g)):
                    raise TrainError(f"non-finite gradient in parameter block {name!r}")
        return float(loss.value), parts, grads

    def param_names(self) -> list[str]:
        raise NotImplementedError


class DeepKernelObjective(_Objective):
    """SSDKL/DKL objective: NLL through the deep kernel + variance penalty.

    Parameter order: W1, b1, W2, b2, W3, b3, log_signal, log_ell (isotropic,
    shape (1,)), log_noise.  With ``alpha == 0`` or an empty unlabeled batch
    the variance term is skipped entirely.
    """

    def __init__(self, X_L, Y_L, X_U, alpha: float):
        super().__init__()
        self.X_L = np.asarray(X_L, dtype=float)
        self.Y_L = np.asarray(Y_L, dtype=float).ravel()
        self.X_U = None if X_U is None or len(X_U) == 0 else np.asarray(X_U, dtype=float)
        if self.Y_L.size < 2:
            raise TrainError("need at least 2 labeled points")
        if alpha < 0:
            raise TrainError("alpha must be nonnegative")
        self.alpha = float(alpha)
        self.m = self.Y_L.size
        self.n = 0 if (self.X_U is None or self.alpha == 0.0) else len(self.X_U)

    def param_names(self):
        return ["W1", "b1", "W2", "b2", "W3", "b3", "log_signal", "log_ell", "log_noise"]

    def _build(self, theta: list[ad.Tensor], jitter: float):
        net_theta, log_sv, log_ell, log_noise = theta[:6], theta[6], theta[7], theta[8]
        X_L = ad.constant(self.X_L)
        Z_L = _net_graph(net_theta, X_L)
        K = kernel_graph(Z_L, Z_L, log_sv, log_ell)
        K_noisy = ad.add_scaled_identity(K, ad.exp(log_noise) + jitter)
        nll = gp_nll_graph(K_noisy, self.Y_L)
        if self.n:
            Z_U = _net_graph(net_theta, ad.constant(self.X_U))
            K_star = kernel_graph(Z_L, Z_U, log_sv, log_ell)
            var_sum = variance_sum_graph(K_noisy, K_star, log_sv)
            loss = nll / self.m + var_sum * self.alpha / self.n
            parts = SemisupLossParts(
                l_likelihood=float(nll.value),
                l_variance=float(var_sum.value),
                alpha=self.alpha,
                m=self.m,
                n=self.n,
                total=float(loss.value),
            )
        else:
            loss = nll / self.m
            parts = SemisupLossParts(
                l_likelihood=float(nll.value),
                l_variance=0.0,
                alpha=self.alpha,
                m=self.m,
                n=0,
                total=float(loss.value),
            )
        return loss, parts


class GpObjective(_Objective):
    """Plain exact-GP negative log marginal likelihood (per labeled point).

    Parameter order: log_signal, log_ell (isotropic or ARD), log_noise.
    With ``fixed_noise`` set, the observation noise is pinned at that value
    and excluded from the trainable parameters; this mirrors an untuned
    off-the-shelf GP whose noise floor is a fixed small regularization
    constant rather than a fitted hyperparameter.
    """

    def __init__(self, X_L, Y_L, fixed_noise: float | None = None):
        super().__init__()
        self.X_L = np.asarray(X_L, dtype=float)
        self.Y_L = np.asarray(Y_L, dtype=float).ravel()
        if self.Y_L.size < 2:
            raise TrainError("need at least 2 labeled points")
        self.m = self.Y_L.size
        self.alpha = 0.0
        self.n = 0
        self.fixed_noise = fixed_noise

    def param_names(self):
        if self.fixed_noise is not None:
            return ["log_signal", "log_ell"]
        return ["log_signal", "log_ell", "log_noise"]

    def _build(self, theta: list[ad.Tensor], jitter: float):
        if self.fixed_noise is not None:
            log_sv, log_ell = theta
            noise = ad.constant(np.array(self.fixed_noise))
        else:
            log_sv, log_ell, log_noise = theta
            noise = ad.exp(log_noise)
        X = ad.constant(self.X_L)
        K = kernel_graph(X, X, log_sv, log_ell)
        K_noisy = ad.add_scaled_identity(K, noise + jitter)
        nll = gp_nll_graph(K_noisy, self.Y_L)
        loss = nll / self.m
        parts = SemisupLossParts(
            l_likelihood=float(nll.value),
            l_variance=0.0,
            alpha=0.0,
            m=self.m,
            n=0,
            total=float(loss.value),
        )
        return loss, parts


def semisup_loss(
    net: FeatureNet,
    spec: KernelSpec,
    X_L: np.ndarray,
    Y_L: np.ndarray,
    X_U: np.ndarray | None,
    alpha: float,
) -> SemisupLossParts:
    """Evaluate the semi-supervised loss at fixed parameters."""
    obj = DeepKernelObjective(X_L, Y_L, X_U, alpha)
    params = net.params() + [
        np.array(spec.log_signal),
        spec.log_lengthscales[:1].copy(),
        np.array(spec.log_noise),
    ]
    _, parts = obj.value(params)
    return parts


def loss_gradient(objective: _Objective, params: list[np.ndarray]) -> list[np.ndarray]:
    """Exact reverse-mode gradient of the objective at ``params``."""
    _, _, grads = objective.value_and_grad(params)
    return grads


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive-moment estimation over a list of parameter arrays."""

    def __init__(self, shapes, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def direction(self, grads: list[np.ndarray]) -> list[np.ndarray]:
        """Bias-corrected update direction (to be scaled by lr and applied)."""
        self.t += 1
        out = []
        for i, g in enumerate(grads):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g**2
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            out.append(m_hat / (np.sqrt(v_hat) + self.eps))
        return out


@dataclass
class OptimizeResult:
    params: list[np.ndarray]
    loss: float
    parts: SemisupLossParts
    losses: list[float]
    iterations: int
    stop_reason: str


def optimize(
    objective: _Objective,
    params: list[np.ndarray],
    max_iters: int = 2000,
    lr: float = 1e-2,
    stop_rel: float = 1e-7,
    stop_window: int = 20,
    max_halvings: int = 8,
) -> OptimizeResult:
    """Full-batch Adam with step-halving: accepted losses never increase.

    Runs under single-threaded BLAS: the per-iteration matrices are small
    enough that threaded kernels cost an order of magnitude in sync
    overhead on small hosts.
    """
    with threadpool_limits(limits=1, user_api="blas"):
        return _optimize_inner(
            objective, params, max_iters, lr, stop_rel, stop_window, max_halvings
        )


def _optimize_inner(
    objective, params, max_iters, lr, stop_rel, stop_window, max_halvings
) -> OptimizeResult:
    params = [p.copy() for p in params]
    loss, parts, grads = objective.value_and_grad(params)
    adam = Adam([p.shape for p in params], lr=lr)
    losses = [loss]
    stop_reason = "max_iters"
    it = 0
    for it in range(1, max_iters + 1):
        direction = adam.direction(grads)
        scale = 1.0
        accepted = None
        for _ in range(max_halvings + 1):
            candidate = [p - lr * scale * d for p, d in zip(params, direction)]
            # Gradient comes back with the acceptance evaluation so an
            # accepted step costs a single graph build.
            cand_loss, cand_parts, cand_grads = objective.value_and_grad(candidate)
            if cand_loss <= loss and math.isfinite(cand_loss):
                accepted = (candidate, cand_loss, cand_parts, cand_grads)
                break
            scale *= 0.5
        if accepted is None:
            stop_reason = "no_descent_step"
            break
        params, loss, parts, grads = accepted
        losses.append(loss)
        if len(losses) > stop_window:
            ref = losses[-stop_window - 1]
            if abs(ref - loss) <= stop_rel * max(1.0, abs(loss)):
                stop_reason = "converged"
                break
    return OptimizeResult(params, loss, parts, losses, it, stop_reason)


# ---------------------------------------------------------------------------
# Trained model
# ---------------------------------------------------------------------------


@dataclass
class RegressorModel:
    """Trained soft-sensor model (GP | DKL | SSDKL), immutable after fit.

    Inference runs on standardized labels: (y - y_center) / y_scale with
    center/scale from the training labels.  In that internal space the
    prior mean is 0 and the prior variance is signal + noise, so far from
    the data the posterior mean reverts to the label mean and the external
    variance to y_scale**2 * (signal_var + noise_var) - see
    ``prior_variance``.  Standardization keeps the per-point loss terms of
    the semi-supervised objective on comparable scales, which is what makes
    the alpha range {0.1..10} meaningful.  The Cholesky factor of the
    training covariance is cached and re-verifiable from the stored
    hyperparameters and data.
    """

    kind: str
    kernel: KernelSpec
    net: FeatureNet | None
    X_train: np.ndarray
    y_train: np.ndarray
    alpha: float | None
    jitter: float
    y_center: float = 0.0
    y_scale: float = 1.0
    diagnostics: dict = field(default_factory=dict)
    _chol: tuple | None = field(default=None, repr=False, compare=False)

    def latent(self, X: np.ndarray) -> np.ndarray:
        return self.net.forward(X) if self.net is not None else np.asarray(X, float)

    def train_covariance(self) -> np.ndarray:
        Z = self.latent(self.X_train)
        return kernel_matrix(Z, Z, self.kernel) + (
            self.kernel.noise_var + self.jitter
        ) * np.eye(len(self.y_train))

    def _factor(self):
        if self._chol is None:
            Z = self.latent(self.X_train)
            K = kernel_matrix(Z, Z, self.kernel) + self.kernel.noise_var * np.eye(
                len(self.y_train)
            )
            start = JITTER_LADDER.index(self.jitter) if self.jitter in JITTER_LADDER else 0
            factor, jitter, _ = chol_with_jitter(K, base_jitter_idx=start)
            self._chol = factor
            self.jitter = jitter
        return self._chol

    def predict(self, X: np.ndarray, chunk: int = 4096, include_noise: bool = True):
        """Posterior mean and variance at query rows, streamed in chunks."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.X_train.shape[1]:
            raise ValueError(
                f"query has {X.shape[1]} features, model was trained on "
                f"{self.X_train.shape[1]}"
            )
        factor = self._factor()
        Z_train = self.latent(self.X_train)
        y_std = (self.y_train - self.y_center) / self.y_scale
        means, variances = [], []
        for start in range(0, X.shape[0], chunk):
            Z_q = self.latent(X[start : start + chunk])
            mean, var = posterior(
                Z_train, y_std, Z_q, self.kernel,
                chol=factor, include_noise=include_noise,
            )
            means.append(self.y_center + self.y_scale * mean)
            variances.append(self.y_scale**2 * var)
        return np.concatenate(means), np.concatenate(variances)

    @property
    def prior_variance(self) -> float:
        """External-space predictive variance far from all training data."""
        return self.y_scale**2 * (self.kernel.signal_var + self.kernel.noise_var)


def gp_predict(model: RegressorModel, X: np.ndarray):
    return model.predict(X)


# ---------------------------------------------------------------------------
# Training protocol
# ---------------------------------------------------------------------------


def _validation_split(m: int, seed: int):
    """Hold out ~20% of labels for best-of-restarts selection."""
    if m < 3:
        return np.arange(m), np.array([], dtype=int)
    n_val = max(1, int(round(0.2 * m)))
    rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_VAL_SPLIT]))
    perm = rng.permutation(m)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _initial_params(kind, in_dim, layer_dims, restart, seed, ard_dims=1, n_kernel=3):
    rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_INIT, restart]))
    if kind == "GP":
        if restart == 0:
            params = [np.array(0.0), np.zeros(ard_dims), np.array(0.0)]
        else:
            params = [
                np.array(rng.normal(0.0, 1.0)),
                rng.normal(0.0, 1.0, size=ard_dims),
                np.array(rng.normal(0.0, 1.0)),
            ]
        return params[:n_kernel]
    net = FeatureNet.init(rng, in_dim, layer_dims)
    return net.params() + [np.array(0.0), np.zeros(1), np.array(0.0)]


def train(
    kind: str,
    dataset,
    alpha: float | None = None,
    restarts: int = 10,
    seed: int = 0,
    layer_dims=DEFAULT_LAYER_DIMS,
    max_iters: int = 2000,
    lr: float = 1e-2,
    variance_batch: int = 1024,
    center_labels: bool = True,
    gp_fixed_noise: float | None = 1e-8,
):
    """Multi-restart training with validation-RMSE restart selection.

    ``dataset`` provides ``labeled()`` and ``unlabeled()`` (a SensorDataset
    or anything shape-compatible).  GP ignores ``alpha`` and the feature
    net entirely; DKL is trained as SSDKL with alpha pinned to 0.  The GP
    baseline stays deliberately untuned: its noise is pinned at
    ``gp_fixed_noise`` (pass None to fit the noise by likelihood like the
    deep-kernel models do).  Deterministic per (seed, data, settings).
    """
    if kind not in ("GP", "DKL", "SSDKL"):
        raise TrainError(f"unknown model kind {kind!r}")
    X_all, Y_all = dataset.labeled()
    X_all = np.asarray(X_all, dtype=float)
    Y_all = np.asarray(Y_all, dtype=float).ravel()
    m = Y_all.size
    if m < 2:
        raise TrainError(f"need at least 2 labels, dataset has {m}")
    train_rows, val_rows = _validation_split(m, seed)
    X_L, Y_L = X_all[train_rows], Y_all[train_rows]
    X_val, Y_val = X_all[val_rows], Y_all[val_rows]
    y_center = float(np.mean(Y_L)) if center_labels else 0.0
    y_scale = float(np.std(Y_L)) if center_labels else 1.0
    if y_scale == 0.0:
        y_scale = 1.0

    if kind == "SSDKL":
        if alpha is None:
            raise TrainError("SSDKL requires alpha")
        alpha_eff = float(alpha)
    else:
        alpha_eff = 0.0
    unlabeled_pool = dataset.unlabeled() if kind == "SSDKL" else None
    if kind == "SSDKL" and (unlabeled_pool is None or len(unlabeled_pool) == 0):
        raise TrainError("SSDKL requires a nonempty unlabeled pool")

    t_start = time.perf_counter()
    records = []
    best = None
    failures = []
    for restart in range(restarts):
        try:
            if kind == "SSDKL" and alpha_eff > 0.0:
                rng_b = np.random.default_rng(
                    np.random.SeedSequence([seed, _TAG_BATCH, restart])
                )
                take = min(variance_batch, len(unlabeled_pool))
                rows = rng_b.choice(len(unlabeled_pool), size=take, replace=False)
                X_U = np.asarray(unlabeled_pool)[np.sort(rows)]
            else:
                X_U = None
            y_std = (Y_L - y_center) / y_scale
            if kind == "GP":
                objective = GpObjective(X_L, y_std, fixed_noise=gp_fixed_noise)
            else:
                objective = DeepKernelObjective(X_L, y_std, X_U, alpha_eff)
            params0 = _initial_params(
                kind, X_L.shape[1], layer_dims, restart, seed,
                n_kernel=2 if (kind == "GP" and gp_fixed_noise is not None) else 3,
            )
            result = optimize(objective, params0, max_iters=max_iters, lr=lr)
            model = _model_from_params(
                kind, result.params, X_L, Y_L, alpha_eff if kind == "SSDKL" else None,
                JITTER_LADDER[objective.jitter_idx], y_center=y_center, y_scale=y_scale,
                fixed_noise=gp_fixed_noise if kind == "GP" else None,
            )
            if val_rows.size:
                pred, _ = model.predict(X_val)
                sel_rmse = _rmse(pred, Y_val)
            else:
                sel_rmse = result.loss
            records.append(
                {
                    "restart": restart,
                    "selection_rmse": sel_rmse,
                    "final_loss": result.loss,
                    "l_likelihood": result.parts.l_likelihood,
                    "l_variance": result.parts.l_variance,
                    "iterations": result.iterations,
                    "stop_reason": result.stop_reason,
                }
            )
            if best is None or sel_rmse < best[0]:
                best = (sel_rmse, restart, model, result)
        except (ad.CholeskyError, TrainError, np.linalg.LinAlgError) as err:
            failures.append(f"restart {restart}: {err}")
            records.append({"restart": restart, "error": str(err)})
    if best is None:
        raise TrainError("all restarts failed: " + "; ".join(failures))
    sel_rmse, restart_id, model, result = best
    diagnostics = {
        "kind": kind,
        "alpha": alpha_eff if kind == "SSDKL" else None,
        "seed": seed,
        "selected_restart": restart_id,
        "selection_rmse": sel_rmse,
        "restarts": records,
        "n_train_labels": int(train_rows.size),
        "n_val_labels": int(val_rows.size),
        "loss_curve": result.losses,
        "wall_time_s": time.perf_counter() - t_start,
    }
    model.diagnostics.update(diagnostics)
    return model, diagnostics


def _model_from_params(
    kind, params, X_L, Y_L, alpha, jitter, y_center=0.0, y_scale=1.0,
    fixed_noise=None,
) -> RegressorModel:
    if kind == "GP":
        if fixed_noise is not None:
            log_noise = math.log(fixed_noise)
        else:
            log_noise = float(params[2])
        spec = KernelSpec(
            log_signal=float(params[0]),
            log_lengthscales=np.atleast_1d(params[1]).copy(),
            log_noise=log_noise,
        )
        net = None
    else:
        net = FeatureNet.from_params([p.copy() for p in params[:6]])
        spec = KernelSpec(
            log_signal=float(params[6]),
            log_lengthscales=np.atleast_1d(params[7]).copy(),
            log_noise=float(params[8]),
        )
    return RegressorModel(
        kind=kind,
        kernel=spec,
        net=net,
        X_train=np.asarray(X_L, dtype=float).copy(),
        y_train=np.asarray(Y_L, dtype=float).copy(),
        alpha=alpha,
        jitter=jitter,
        y_center=y_center,
        y_scale=y_scale,
    )


@dataclass
class ArrayDataset:
    """Minimal dataset adapter for training on plain arrays."""

    X_l: np.ndarray
    y_l: np.ndarray
    X_u: np.ndarray | None = None

    def labeled(self):
        return self.X_l, self.y_l

    def unlabeled(self):
        return self.X_u if self.X_u is not None else np.empty((0, self.X_l.shape[1]))


def gp_fit(
    X_L: np.ndarray,
    Y_L: np.ndarray,
    n_starts: int = 10,
    seed: int = 0,
    max_iters: int = 2000,
    lr: float = 1e-2,
    ard: bool = False,
    center_labels: bool = True,
) -> RegressorModel:
    """Fit a plain GP by multi-start maximization of the marginal likelihood.

    Starts are selected by final likelihood (not validation RMSE); use
    :func:`train` for the experiment protocol.
    """
    X_L = np.atleast_2d(np.asarray(X_L, dtype=float))
    Y_L = np.asarray(Y_L, dtype=float).ravel()
    y_center = float(np.mean(Y_L)) if center_labels else 0.0
    y_scale = float(np.std(Y_L)) if center_labels else 1.0
    if y_scale == 0.0:
        y_scale = 1.0
    ard_dims = X_L.shape[1] if ard else 1
    best = None
    failures = []
    for start in range(n_starts):
        objective = GpObjective(X_L, (Y_L - y_center) / y_scale)
        params0 = _initial_params("GP", X_L.shape[1], None, start, seed, ard_dims=ard_dims)
        try:
            result = optimize(objective, params0, max_iters=max_iters, lr=lr)
        except (ad.CholeskyError, TrainError) as err:
            failures.append(f"start {start}: {err}")
            continue
        if best is None or result.loss < best.loss:
            best = result
            best_jitter = JITTER_LADDER[objective.jitter_idx]
    if best is None:
        raise TrainError("all GP starts failed: " + "; ".join(failures))
    return _model_from_params(
        "GP", best.params, X_L, Y_L, None, best_jitter, y_center=y_center, y_scale=y_scale
    )


# ---------------------------------------------------------------------------
# Model artifacts
# ---------------------------------------------------------------------------

ARTIFACT_VERSION = 1


def _fingerprint(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def save_model(model: RegressorModel, path: str | Path, extra_meta: dict | None = None):
    """Versioned binary model container plus a JSON diagnostics sidecar."""
    path = Path(path)
    payload = {
        "version": np.array(ARTIFACT_VERSION),
        "kind": np.array(model.kind),
        "log_signal": np.array(model.kernel.log_signal),
        "log_lengthscales": model.kernel.log_lengthscales,
        "log_noise": np.array(model.kernel.log_noise),
        "X_train": model.X_train,
        "y_train": model.y_train,
        "alpha": np.array(np.nan if model.alpha is None else model.alpha),
        "jitter": np.array(model.jitter),
        "y_center": np.array(model.y_center),
        "y_scale": np.array(model.y_scale),
        "fingerprint": np.array(_fingerprint(model.X_train, model.y_train)),
    }
    if model.net is not None:
        for i, (W, b) in enumerate(zip(model.net.weights, model.net.biases)):
            payload[f"W{i}"] = W
            payload[f"b{i}"] = b
    np.savez_compressed(path, **payload)
    meta = dict(model.diagnostics)
    if extra_meta:
        meta.update(extra_meta)
    sidecar = path.with_suffix(path.suffix + ".json")
    with open(sidecar, "w") as fh:
        json.dump(meta, fh, indent=2, default=float)


def load_model(path: str | Path) -> RegressorModel:
    path = Path(path)
    with np.load(path, allow_pickle=False) as blob:
        version = int(blob["version"])
        if version != ARTIFACT_VERSION:
            raise TrainError(f"unsupported model artifact version {version}")
        kind = str(blob["kind"])
        net = None
        if "W0" in blob:
            net = FeatureNet(
                weights=[blob["W0"], blob["W1"], blob["W2"]],
                biases=[blob["b0"], blob["b1"], blob["b2"]],
            )
        alpha = float(blob["alpha"])
        model = RegressorModel(
            kind=kind,
            kernel=KernelSpec(
                log_signal=float(blob["log_signal"]),
                log_lengthscales=blob["log_lengthscales"],
                log_noise=float(blob["log_noise"]),
            ),
            net=net,
            X_train=blob["X_train"],
            y_train=blob["y_train"],
            alpha=None if math.isnan(alpha) else alpha,
            jitter=float(blob["jitter"]),
            y_center=float(blob["y_center"]),
            y_scale=float(blob["y_scale"]),
        )
        stored = str(blob["fingerprint"])
    if stored != _fingerprint(model.X_train, model.y_train):
        raise TrainError(f"{path}: training-data fingerprint mismatch")
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        with open(sidecar) as fh:
            model.diagnostics.update(json.load(fh))
    return model
