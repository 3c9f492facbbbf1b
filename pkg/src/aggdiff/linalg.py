"""Periodic (cyclic) tridiagonal solves used by the implicit diffusion step."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def solve_cyclic_tridiagonal(lower, diag, upper, rhs):
    """Solve cyclic tridiagonal systems along the last axis.

    Row i reads ``lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]``
    with indices taken modulo n, so ``lower[0]`` and ``upper[-1]`` are the
    corner entries. Leading axes are independent systems. Uses the
    Sherman-Morrison correction on top of a banded LU solve.
    """
    lower = np.asarray(lower, dtype=float)
    diag = np.asarray(diag, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if diag.ndim == 1:
        return _solve_one(lower, diag, upper, rhs)
    return _solve_batched(lower, diag, upper, rhs)


def _solve_one(lower, diag, upper, rhs):
    n = diag.size
    alpha = lower[0]  # A[0, n-1]
    beta = upper[-1]  # A[n-1, 0]
    gamma = -diag[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    ab[1, 0] -= gamma
    ab[1, -1] -= alpha * beta / gamma
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = beta
    both = solve_banded((1, 1), ab, np.column_stack([rhs, u]), check_finite=False)
    y, q = both[:, 0], both[:, 1]
    vy = y[0] + alpha / gamma * y[-1]
    vq = q[0] + alpha / gamma * q[-1]
    return y - (vy / (1.0 + vq)) * q


def _thomas(lower, diag, upper, rhs):
    """Non-pivoting elimination along the last axis, vectorised over the rest.

    Stable for the diagonally dominant systems built by the integrator.
    """
    n = diag.shape[-1]
    c = np.empty_like(diag)
    d = np.empty_like(rhs)
    c[..., 0] = upper[..., 0] / diag[..., 0]
    d[..., 0] = rhs[..., 0] / diag[..., 0]
    for i in range(1, n):
        denom = diag[..., i] - lower[..., i] * c[..., i - 1]
        c[..., i] = upper[..., i] / denom
        d[..., i] = (rhs[..., i] - lower[..., i] * d[..., i - 1]) / denom
    x = np.empty_like(d)
    x[..., -1] = d[..., -1]
    for i in range(n - 2, -1, -1):
        x[..., i] = d[..., i] - c[..., i] * x[..., i + 1]
    return x


def _solve_batched(lower, diag, upper, rhs):
    alpha = lower[..., 0]
    beta = upper[..., -1]
    gamma = -diag[..., 0]
    d = diag.copy()
    d[..., 0] -= gamma
    d[..., -1] -= alpha * beta / gamma
    lo = lower.copy()
    lo[..., 0] = 0.0
    up = upper.copy()
    up[..., -1] = 0.0
    u = np.zeros_like(rhs)
    u[..., 0] = gamma
    u[..., -1] = beta
    y = _thomas(lo, d, up, rhs)
    q = _thomas(lo, d, up, u)
    vy = y[..., 0] + alpha / gamma * y[..., -1]
    vq = q[..., 0] + alpha / gamma * q[..., -1]
    return y - (vy / (1.0 + vq))[..., None] * q


def cyclic_tridiagonal_dense(lower, diag, upper) -> np.ndarray:
    """Dense matrix of a single cyclic tridiagonal system (testing aid)."""
    n = len(diag)
    A = np.diag(np.asarray(diag, dtype=float))
    for i in range(n):
        A[i, (i - 1) % n] += lower[i]
        A[i, (i + 1) % n] += upper[i]
    return A
