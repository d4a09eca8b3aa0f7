"""Truncated SVD of the basis matrix and projection into its leading subspace."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brdf import BasisSet

# Use the n x n Gram matrix once the basis is this much taller than wide.
_GRAM_RATIO = 8


@dataclass(frozen=True, eq=False)
class Subspace:
    U_hat: np.ndarray  # (p, N)
    singular_values: np.ndarray  # (min(p, n),), non-increasing
    V: np.ndarray  # (n, min(p, n)) right singular vectors

    @property
    def N(self) -> int:
        return self.U_hat.shape[1]

    @property
    def p(self) -> int:
        return self.U_hat.shape[0]

    def project(self, rho) -> np.ndarray:
        return project(self, rho)

    def reconstruct(self, coords) -> np.ndarray:
        return self.U_hat @ np.asarray(coords, dtype=np.float64)


def _fix_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip singular pairs so each left vector's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def thin_svd(B: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``B = U diag(s) V^T`` with deterministic signs.

    Tall matrices go through the eigendecomposition of ``B^T B``; the left
    vectors are then ``B V / s`` (zero for null singular values).
    """
    B = np.asarray(B, dtype=np.float64)
    p, n = B.shape
    if p >= _GRAM_RATIO * n:
        evals, V = np.linalg.eigh(B.T @ B)
        order = np.argsort(evals)[::-1]
        evals, V = evals[order], V[:, order]
        s = np.sqrt(np.clip(evals, 0.0, None))
        # eigenvalues carry ~eps * s0^2 error, so s is only resolved to s0 * sqrt(n * eps)
        tiny = s <= s[0] * np.sqrt(n * np.finfo(float).eps) if s[0] > 0 else np.ones_like(s, dtype=bool)
        U = B @ V
        U[:, ~tiny] /= s[~tiny]
        U[:, tiny] = 0.0
        s[tiny] = 0.0
    else:
        U, s, Vt = np.linalg.svd(B, full_matrices=False)
        V = Vt.T
    U, V = _fix_signs(U, V)
    return U, s, V


def fit_subspace(basis: BasisSet | np.ndarray, N: int = 4) -> Subspace:
    """Leading ``N`` left singular vectors of the (uncentered) basis matrix."""
    B = basis.matrix if isinstance(basis, BasisSet) else np.asarray(basis, dtype=np.float64)
    p, n = B.shape
    if not 1 <= N <= min(p, n):
        raise ValueError(f"subspace dimension {N} outside [1, {min(p, n)}]")
    U, s, V = thin_svd(B)
    if s[0] == 0.0 or np.any(s[:N] <= s[0] * max(p, n) * np.finfo(float).eps):
        raise ValueError(f"basis has rank below the requested subspace dimension {N}")
    U_hat = np.ascontiguousarray(U[:, :N])
    for arr in (U_hat, s, V):
        arr.flags.writeable = False
    return Subspace(U_hat, s, V)


def project(sub: Subspace, rho) -> np.ndarray:
    """Coordinates ``U_hat^T rho``; ``rho`` may be a vector or a ``(p, k)`` matrix."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape[0] != sub.p:
        raise ValueError(f"BRDF vector of length {rho.shape[0]}, subspace expects {sub.p}")
    return sub.U_hat.T @ rho
