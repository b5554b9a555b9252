"""Small reverse-mode automatic differentiation engine on numpy arrays.

Supports exactly the operations needed by the regression stack: broadcasted
arithmetic, matmul, elementwise transcendentals, axis reductions, and two
positive-definite linear-algebra primitives (``psd_solve``, ``logdet_psd``)
whose adjoints are expressed in closed form through a shared Cholesky
factorization.  Gradients are accumulated by a single topologically ordered
backward sweep from a scalar output.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "CholeskyError",
    "constant",
    "parameter",
    "exp",
    "log",
    "tanh",
    "clip_min",
    "pairwise_sqdist",
    "add_scaled_identity",
    "psd_solve",
    "logdet_psd",
    "backward",
]


class CholeskyError(RuntimeError):
    """Raised when a matrix handed to a PSD op fails to factorize."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcasted axes."""
    if grad.shape == shape:
        return grad
    # Sum away prepended axes.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    # Sum axes that were broadcast from size 1.
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the computation graph wrapping an ndarray value."""

    __slots__ = ("value", "grad", "parents", "vjp", "_chol")

    def __init__(self, value, parents=(), vjp=None):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = parents
        # vjp(g) -> tuple of gradient contributions aligned with parents.
        self.vjp = vjp
        self._chol: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        return Tensor(
            self.value + other.value,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        return Tensor(
            self.value - other.value,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
        )

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        other = _wrap(other)
        return Tensor(
            self.value * other.value,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.value, self.shape),
                _unbroadcast(g * self.value, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        return Tensor(
            self.value / other.value,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.value, self.shape),
                _unbroadcast(-g * self.value / other.value**2, other.shape),
            ),
        )

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __neg__(self):
        return Tensor(-self.value, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        other = _wrap(other)
        return Tensor(
            self.value @ other.value,
            (self, other),
            lambda g: (g @ other.value.T, self.value.T @ g),
        )

    @property
    def T(self):
        return Tensor(self.value.T, (self,), lambda g: (g.T,))

    def sum(self, axis=None, keepdims=False):
        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            g_ = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g_, self.shape).copy(),)

        return Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,), vjp)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(x) -> Tensor:
    """Leaf tensor whose gradient is collected by :func:`backward`."""
    return Tensor(x)


# -- elementwise functions -------------------------------------------------


def exp(x: Tensor) -> Tensor:
    out_val = np.exp(x.value)
    return Tensor(out_val, (x,), lambda g: (g * out_val,))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.value), (x,), lambda g: (g / x.value,))


def tanh(x: Tensor) -> Tensor:
    out_val = np.tanh(x.value)
    return Tensor(out_val, (x,), lambda g: (g * (1.0 - out_val**2),))


def clip_min(x: Tensor, lo: float) -> Tensor:
    """max(x, lo); subgradient passes only where x > lo."""
    mask = x.value > lo
    return Tensor(np.where(mask, x.value, lo), (x,), lambda g: (g * mask,))


def pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """D[i, j] = ||a_i - b_j||^2 as a single fused graph node."""
    av, bv = a.value, b.value
    d = (
        np.sum(av**2, axis=1)[:, None]
        + np.sum(bv**2, axis=1)[None, :]
        - 2.0 * av @ bv.T
    )
    np.maximum(d, 0.0, out=d)

    def vjp(g):
        ga = 2.0 * (av * g.sum(axis=1)[:, None] - g @ bv)
        gb = 2.0 * (bv * g.sum(axis=0)[:, None] - g.T @ av)
        return ga, gb

    return Tensor(d, (a, b), vjp)


def add_scaled_identity(a: Tensor, s: Tensor) -> Tensor:
    """A + s * I for square A and scalar s (fused diagonal update)."""
    out = a.value.copy()
    sv = float(s.value)
    idx = np.arange(a.shape[0])
    out[idx, idx] += sv

    def vjp(g):
        return g, np.array(np.trace(g)).reshape(s.shape)

    return Tensor(out, (a, s), vjp)


# -- PSD linear algebra ----------------------------------------------------


def _cholesky_of(a: Tensor) -> np.ndarray:
    if a._chol is None:
        try:
            a._chol = np.linalg.cholesky(a.value)
        except np.linalg.LinAlgError as err:
            raise CholeskyError(str(err)) from err
    return a._chol


def _cho_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    z = solve_triangular(chol, b, lower=True, check_finite=False)
    return solve_triangular(chol.T, z, lower=False, check_finite=False)


def psd_solve(a: Tensor, b: Tensor) -> Tensor:
    """C = A^{-1} B for symmetric positive-definite A (via Cholesky).

    Adjoints: dB = A^{-1} dC, dA = -(A^{-1} dC) C^T.
    """
    chol = _cholesky_of(a)
    c_val = _cho_solve(chol, b.value)

    def vjp(g):
        gb = _cho_solve(chol, g)
        ga = -gb @ c_val.T
        return ga, gb

    return Tensor(c_val, (a, b), vjp)


def logdet_psd(a: Tensor) -> Tensor:
    """log det A for symmetric positive-definite A; adjoint is A^{-1}."""
    chol = _cholesky_of(a)
    val = 2.0 * np.sum(np.log(np.diag(chol)))

    def vjp(g):
        n = a.shape[0]
        return (float(g) * _cho_solve(chol, np.eye(n)),)

    return Tensor(val, (a,), vjp)


# -- backward sweep --------------------------------------------------------


def backward(out: Tensor) -> None:
    """Accumulate gradients of scalar ``out`` into every reachable node.

    Gradients start as None and are materialized lazily on first
    contribution; leaves that the output does not depend on end with a zero
    gradient.
    """
    if out.value.size != 1:
        raise ValueError("backward() requires a scalar output")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value)

    for node in reversed(order):
        if node.vjp is None or not node.parents or node.grad is None:
            continue
        contributions = node.vjp(node.grad)
        for parent, contrib in zip(node.parents, contributions):
            if parent.grad is None:
                parent.grad = contrib
            else:
                parent.grad = parent.grad + contrib

    for node in order:
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
