"""Quantum kernel Gram matrices and their diagnostics."""
from __future__ import annotations

import numpy as np

from .sim import hermitize

DEFAULT_LAMBDAS = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


def kernel_matrix(states, others=None) -> np.ndarray:
    """k(x_i, x_j) = |<x_i|x_j>|^2 for (N, d) amplitude batches.

    With one argument the result is symmetrized and its diagonal set from
    the exact self-overlaps.
    """
    a = np.asarray(states, dtype=complex)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("need a non-empty (N, d) batch of states")
    b = a if others is None else np.asarray(others, dtype=complex)
    k = np.abs(a.conj() @ b.T) ** 2
    if others is None:
        k = 0.5 * (k + k.T)
    return k


def generalization_bound(K, y, lam) -> float | np.ndarray:
    """G = sqrt(||W*||_F^2 / N) with ||W*||^2 = y^T (K+lam)^-1 K (K+lam)^-1 y.

    ``lam`` may be a scalar or a sequence; the eigendecomposition of K is
    shared across all values.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = K.shape[0]
    if y.shape != (n,):
        raise ValueError("label vector does not match the kernel size")
    lams = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lams <= 0):
        raise ValueError("lambda must be positive")
    eig, vec = np.linalg.eigh(hermitize(K))
    eig = np.clip(eig, 0.0, None)
    proj = (vec.T @ y) ** 2
    w2 = (proj[None, :] * eig[None, :] / (eig[None, :] + lams[:, None]) ** 2).sum(axis=1)
    g = np.sqrt(np.clip(w2, 0.0, None) / n)
    return float(g[0]) if np.ndim(lam) == 0 else g


def kernel_variance(K) -> float:
    """Population variance of the strictly-upper-triangular entries."""
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    return float(np.var(K[np.triu_indices(n, k=1)]))


def kernel_rank(K, tol: float | None = None, rel_tol: float | None = None) -> int:
    """Numerical rank: eigenvalues above ``tol``, or ``rel_tol * lambda_max``,
    or by default N * machine-eps * lambda_max."""
    K = np.asarray(K, dtype=float)
    eig = np.linalg.eigvalsh(hermitize(K))
    if tol is None:
        scale = K.shape[0] * np.finfo(float).eps if rel_tol is None else rel_tol
        tol = scale * max(eig.max(), 0.0)
    return int(np.sum(eig > tol))


def check_kernel(K, atol: float = 1e-10, psd_tol: float = 1e-8) -> None:
    K = np.asarray(K, dtype=float)
    if np.max(np.abs(K - K.T)) > atol:
        raise ValueError("kernel is not symmetric")
    if np.max(np.abs(np.diag(K) - 1.0)) > atol:
        raise ValueError("kernel diagonal is not 1")
    if np.linalg.eigvalsh(K).min() < -psd_tol:
        raise ValueError("kernel is not positive semidefinite")
