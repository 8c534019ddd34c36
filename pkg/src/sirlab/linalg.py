"""Dense symmetric linear algebra and subspace geometry."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, SingularCovariance

DEFAULT_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs of a symmetric matrix, sorted by decreasing eigenvalue.

    Column ``i`` of ``eigenvectors`` pairs with ``eigenvalues[i]``; each column is
    signed so that its largest-magnitude entry is nonnegative.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def top(self, k: int) -> np.ndarray:
        return self.eigenvectors[:, :k]


def symmetrize(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInput("matrix has non-finite entries")
    return 0.5 * (A + A.T)


def _fix_signs(Q: np.ndarray) -> np.ndarray:
    # Deterministic sign: largest-|.| entry of each column made nonnegative.
    idx = np.argmax(np.abs(Q), axis=0)
    signs = np.sign(Q[idx, np.arange(Q.shape[1])])
    signs[signs == 0] = 1.0
    return Q * signs


def sym_eig(A) -> EigenDecomposition:
    A = symmetrize(A)
    w, Q = np.linalg.eigh(A)
    w = w[::-1].copy()
    Q = _fix_signs(Q[:, ::-1])
    return EigenDecomposition(w, Q)


def spd_inv_sqrt(A, floor: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Symmetric inverse square root with eigenvalues clamped at ``floor * lambda_max``."""
    if floor <= 0:
        raise InvalidInput("floor must be positive")
    eig = sym_eig(A)
    lam_max = eig.eigenvalues[0]
    if not lam_max > 0:
        raise SingularCovariance(f"largest eigenvalue {lam_max!r} is not positive")
    w = np.maximum(eig.eigenvalues, floor * lam_max)
    Q = eig.eigenvectors
    R = (Q / np.sqrt(w)) @ Q.T
    return 0.5 * (R + R.T)


def sample_covariance(X) -> np.ndarray:
    """Covariance with divisor n."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInput(f"expected an n x p matrix, got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise InvalidInput(f"need at least 2 rows for a covariance, got {n}")
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / n
    return 0.5 * (S + S.T)


def orthonormalize(B) -> np.ndarray:
    """Euclidean-orthonormal basis of col(B) (thin QR)."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q, _ = np.linalg.qr(B)
    return Q


def projection(B) -> np.ndarray:
    Q = orthonormalize(B)
    return Q @ Q.T


def general_loss(B1, B2) -> float:
    """Squared Frobenius distance between the projections onto col(B1) and col(B2).

    Both bases must be column-orthonormal; the value lies in [0, 2d].
    """
    B1 = np.atleast_2d(np.asarray(B1, dtype=float).T).T
    B2 = np.atleast_2d(np.asarray(B2, dtype=float).T).T
    if B1.shape != B2.shape:
        raise InvalidInput(f"basis shapes differ: {B1.shape} vs {B2.shape}")
    # ||P1 - P2||_F^2 = 2d - 2 ||B1^T B2||_F^2 for orthonormal bases; the direct
    # form is kept so that slightly non-orthonormal inputs are not hidden.
    D = B1 @ B1.T - B2 @ B2.T
    return float(np.sum(D * D))
