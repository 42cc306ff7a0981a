"""Linear operators and the quadratic data-fit term ``F(x) = 0.5 * ||y - Lx||^2``.

The solver only ever touches ``F`` through :func:`grad`, :func:`hessian_apply`
and the cached co-coercivity modulus ``beta``, so other smooth terms could be
added behind the same surface; only the quadratic one is shipped.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "LinearOp",
    "DenseOp",
    "IdentityOp",
    "CircularConvOp",
    "SmoothTerm",
    "PowerIterationError",
    "estimate_beta",
    "grad",
    "hessian_apply",
    "load_dense_csv",
    "load_vector_csv",
]

# Fixed start vector seed for the power iteration, so beta is reproducible.
_POWER_SEED = 0x5EED


class PowerIterationError(RuntimeError):
    """Power iteration did not reach the requested tolerance.

    Carries the last spectral-norm estimate in ``last_estimate``.
    """

    def __init__(self, message, last_estimate):
        super().__init__(message)
        self.last_estimate = last_estimate


class LinearOp:
    """Base class: a linear map from R^n to R^m with an exact adjoint."""

    m: int
    n: int

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, u):
        raise NotImplementedError

    def gram(self, h):
        """Apply the Gram operator ``L^T L``."""
        return self.adjoint(self.apply(h))

    def _check_input(self, v, size, what):
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.shape[0] != size:
            raise ValueError(
                f"{what} expects a vector of length {size}, got shape {v.shape}"
            )
        return v


class DenseOp(LinearOp):
    """Multiplication by an explicit m x n matrix."""

    def __init__(self, matrix):
        a = np.asarray(matrix, dtype=float)
        if a.ndim != 2:
            raise ValueError("dense operator needs a 2-D matrix")
        self.matrix = a
        self.m, self.n = a.shape

    def apply(self, x):
        return self.matrix @ self._check_input(x, self.n, "apply")

    def adjoint(self, u):
        return self.matrix.T @ self._check_input(u, self.m, "adjoint")


class IdentityOp(LinearOp):
    def __init__(self, n):
        self.m = self.n = int(n)

    def apply(self, x):
        return self._check_input(x, self.n, "apply").copy()

    def adjoint(self, u):
        return self._check_input(u, self.n, "adjoint").copy()


class CircularConvOp(LinearOp):
    """1-D circular convolution with a fixed kernel (periodic boundary).

    The adjoint is circular correlation with the same kernel.
    """

    def __init__(self, kernel, n):
        k = np.asarray(kernel, dtype=float)
        if k.ndim != 1 or k.size == 0 or k.size > n:
            raise ValueError("kernel must be a non-empty vector of length <= n")
        self.m = self.n = int(n)
        pad = np.zeros(self.n)
        pad[: k.size] = k
        self._kf = np.fft.rfft(pad)

    def apply(self, x):
        x = self._check_input(x, self.n, "apply")
        return np.fft.irfft(self._kf * np.fft.rfft(x), self.n)

    def adjoint(self, u):
        u = self._check_input(u, self.n, "adjoint")
        return np.fft.irfft(np.conj(self._kf) * np.fft.rfft(u), self.n)


def apply_columns(op, B):
    """Apply ``op`` to every column of ``B``; returns an m x d array."""
    B = np.asarray(B, dtype=float)
    return np.column_stack([op.apply(B[:, j]) for j in range(B.shape[1])])


def gram_matrix(op, B):
    """Restricted Gram matrix ``B^T (L^T L) B`` for a column basis ``B``."""
    LB = apply_columns(op, B)
    return LB.T @ LB


def estimate_beta(op, tol=1e-9, max_iter=10_000, seed=_POWER_SEED):
    """Estimate ``beta = 1 / ||L^T L||`` by power iteration on the Gram operator.

    Stops when the eigen-residual of the Rayleigh quotient drops below
    ``tol`` relative, which brackets the true norm in [est, est*(1+tol)];
    the returned value is the reciprocal of the estimate inflated by
    ``(1 + tol)``, so step sizes built from it stay valid.

    Raises :class:`PowerIterationError` when not converged in ``max_iter``
    iterations; the exception carries the last estimate.
    """
    if hasattr(op, "op"):  # accept a SmoothTerm as well
        op = op.op
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = op.gram(v)
        est = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            raise PowerIterationError("operator maps start vector to zero", 0.0)
        if np.linalg.norm(w - est * v) <= tol * est:
            return 1.0 / (est * (1.0 + tol))
        v = w / nw
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} iterations", est
    )


class SmoothTerm:
    """The quadratic term ``F(x) = 0.5 * ||y - Lx||^2`` with cached ``beta``.

    ``grad F`` is ``(1/beta)``-Lipschitz with ``beta = 1 / ||L^T L||``.
    Immutable after construction; safe for concurrent use.
    """

    def __init__(self, op, y, beta=None):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.shape[0] != op.m:
            raise ValueError(f"data vector must have length {op.m}")
        self.op = op
        self.y = y
        self.beta = float(beta) if beta is not None else estimate_beta(op)
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    def value(self, x):
        r = self.y - self.op.apply(x)
        return 0.5 * float(r @ r)


def grad(F, x):
    """Exact gradient ``L^T (L x - y)`` of the quadratic term."""
    return F.op.adjoint(F.op.apply(x) - F.y)


def hessian_apply(F, h):
    """Constant Hessian action ``L^T L h`` of the quadratic term."""
    return F.op.gram(np.asarray(h, dtype=float))


def load_dense_csv(path):
    """Load a dense operator from a header-free, row-major CSV file."""
    a = np.loadtxt(path, delimiter=",", ndmin=2)
    return DenseOp(a)


def load_vector_csv(path):
    """Load a flat CSV vector (one value per field, any row layout)."""
    return np.loadtxt(path, delimiter=",").reshape(-1)
