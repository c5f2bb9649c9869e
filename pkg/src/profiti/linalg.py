"""Small dense linear-algebra kernels: triangular solves, LU with partial
pivoting, and a power-iteration spectral norm.

Everything here works on plain numpy arrays and is free of the autodiff
graph; the graph ops in :mod:`profiti.autodiff` call into this module for
their forward passes.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


def forward_substitution(L, b, count_ops=False):
    """Solve L x = b for lower-triangular L in O(K^2).

    With ``count_ops`` the number of scalar multiply/divide operations is
    returned alongside the solution (used to verify the quadratic cost).
    """
    L = np.asarray(L, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = L.shape[0]
    if L.shape != (n, n) or b.shape[0] != n:
        raise ShapeError(f"forward_substitution: L {L.shape} vs b {b.shape}")
    x = np.zeros_like(b)
    ops = 0
    for i in range(n):
        diag = L[i, i]
        if diag == 0.0:
            raise NumericError(f"forward_substitution: zero diagonal at row {i}")
        x[i] = (b[i] - np.dot(L[i, :i], x[:i])) / diag
        ops += i + 1
    if count_ops:
        return x, ops
    return x


def lu_factor(a):
    """LU decomposition with partial pivoting, PA = LU.

    Returns ``(lu, piv, n_swaps)`` where ``lu`` stores L (unit diagonal,
    below) and U (on and above the diagonal) and ``piv`` is the permutation
    applied to the rows of ``a``.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"lu_factor: square matrix required, got {a.shape}")
    piv = np.arange(n)
    n_swaps = 0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if p != k:
            a[[k, p]] = a[[p, k]]
            piv[[k, p]] = piv[[p, k]]
            n_swaps += 1
        pivot = a[k, k]
        if pivot == 0.0:
            continue  # singular; caller inspects the diagonal
        a[k + 1:, k] /= pivot
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return a, piv, n_swaps


def lu_solve(lu, piv, b):
    """Solve A x = b given ``lu_factor(A)`` output."""
    b = np.asarray(b, dtype=np.float64)
    n = lu.shape[0]
    x = b[piv].astype(np.float64, copy=True)
    for i in range(1, n):  # forward: L y = Pb (unit diagonal)
        x[i] -= np.dot(lu[i, :i], x[:i])
    for i in range(n - 1, -1, -1):  # backward: U x = y
        diag = lu[i, i]
        if diag == 0.0:
            raise NumericError("lu_solve: singular matrix")
        x[i] = (x[i] - np.dot(lu[i, i + 1:], x[i + 1:])) / diag
    return x


def slogdet_lu(a):
    """(sign, log|det|) of a square matrix via LU with partial pivoting."""
    lu, _piv, n_swaps = lu_factor(a)
    diag = np.diagonal(lu)
    if np.any(diag == 0.0):
        return 0.0, -np.inf
    sign = (-1.0) ** (n_swaps % 2) * np.prod(np.sign(diag))
    return float(sign), float(np.sum(np.log(np.abs(diag))))


def inverse_lu(a):
    """Dense inverse via LU (used for determinant gradients)."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    lu, piv, _ = lu_factor(a)
    cols = [lu_solve(lu, piv, e) for e in np.eye(n)]
    return np.stack(cols, axis=1)


def spectral_norm_power(a, tol=1e-9, max_iter=10000):
    """Largest singular value of ``a`` by power iteration on A^T A.

    Returns ``(sigma, u, v)`` with unit left/right singular vectors.  The
    start vector is a fixed pseudo-random draw so results are deterministic.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"spectral_norm: matrix required, got shape {a.shape}")
    if not np.any(a):
        return 0.0, np.zeros(a.shape[0]), np.zeros(a.shape[1])
    v = np.random.default_rng(0).standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = a.T @ (a @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0, np.zeros(a.shape[0]), v
        v_next = w / norm_w
        sigma_next = float(np.linalg.norm(a @ v_next))
        # sigma converges second order in the vector error, so ask the
        # vector to settle too (its accuracy sets the gradient accuracy)
        vec_step = float(np.max(np.abs(v_next - v)))  # A^T A is PSD: no sign flips
        converged = (abs(sigma_next - sigma) <= tol * max(sigma_next, 1e-300)
                     and vec_step <= 1e-8)
        v = v_next
        sigma = sigma_next
        if converged:
            break
    else:
        raise NumericError(
            f"spectral_norm: power iteration did not converge in {max_iter} steps"
        )
    u = a @ v
    norm_u = np.linalg.norm(u)
    if norm_u > 0:
        u = u / norm_u
    return sigma, u, v
