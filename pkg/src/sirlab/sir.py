"""Sliced inverse regression: central-space basis and gSNR estimate."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InvalidInput, PreconditionViolated, SingularCovariance
from .linalg import DEFAULT_EIG_FLOOR, sample_covariance, spd_inv_sqrt, sym_eig
from .slicing import (
    DEFAULT_GAMMA,
    CandidateMatrix,
    Dataset,
    candidate_matrix,
    sliced_partition,
)


class RankDeficientWarning(UserWarning):
    """Requested more directions than the candidate matrix has nonzero eigenvalues."""


def default_slices(d: int, n: int) -> int:
    return max(d, min(10 * d, n // 10))


@dataclass(frozen=True)
class SirConfig:
    d: int
    H: int | None = None
    sigma_mode: Literal["identity", "estimated"] = "identity"
    eig_floor: float = DEFAULT_EIG_FLOOR

    def __post_init__(self):
        if self.d < 1:
            raise InvalidInput(f"d must be >= 1, got {self.d}")
        if self.H is not None and self.H < self.d:
            raise InvalidInput(f"need H >= d, got H={self.H}, d={self.d}")
        if self.sigma_mode not in ("identity", "estimated"):
            raise InvalidInput(f"unknown sigma_mode {self.sigma_mode!r}")

    def slices_for(self, n: int) -> int:
        return self.H if self.H is not None else default_slices(self.d, n)


@dataclass(frozen=True)
class SirFit:
    basis: np.ndarray
    candidate: CandidateMatrix
    gsnr_hat: float
    top_eigenvalues: np.ndarray
    kappa_hat: float
    sigma_hat: np.ndarray | None = None


def _numerical_rank(w: np.ndarray) -> int:
    scale = max(abs(w[0]), np.finfo(float).tiny) if w.size else 0.0
    return int(np.sum(w > 1e-10 * scale)) if scale > np.finfo(float).tiny else 0


def fit_sir(data: Dataset, cfg: SirConfig) -> SirFit:
    """Estimate a p x d basis of the central space.

    In identity mode the basis is the top-d eigenvectors of the candidate matrix.
    In estimated mode the candidate matrix is whitened by the inverse square root
    of the sample covariance, which solves max Tr(B^T L B) s.t. B^T S B = I_d.
    """
    d, p = cfg.d, data.p
    if d > p:
        raise InvalidInput(f"d={d} exceeds p={p}")
    H = cfg.slices_for(data.n)
    cand = candidate_matrix(data, sliced_partition(data, H))
    sigma = None
    if cfg.sigma_mode == "identity":
        eig = cand.eig
        basis = eig.top(d)
    else:
        if data.n <= p:
            raise SingularCovariance(f"n={data.n} <= p={p}: sample covariance is singular")
        sigma = sample_covariance(data.X)
        W = spd_inv_sqrt(sigma, cfg.eig_floor)
        eig = sym_eig(W @ cand.lambda_hat @ W)
        basis = W @ eig.top(d)
    w = eig.eigenvalues
    if d > _numerical_rank(w):
        warnings.warn(
            f"d={d} exceeds the numerical rank of the candidate matrix; "
            "trailing directions are arbitrary",
            RankDeficientWarning,
            stacklevel=2,
        )
    top = w[: min(H, p)].copy()
    lam_d = max(float(w[d - 1]), 0.0)
    kappa = float(w[0] / lam_d) if lam_d > 0 else float("inf")
    return SirFit(basis, cand, lam_d, top, kappa, sigma)


def estimate_gsnr(data: Dataset, cfg: SirConfig) -> float:
    return fit_sir(data, cfg).gsnr_hat


def deviation_check(model, n: int, H: int, reps: int, rng, gamma: float = DEFAULT_GAMMA) -> float:
    """Fraction of replications with |b^T (L_hat - L) b| <= b^T L b / 2 along the top true direction.

    ``model`` is a :class:`~sirlab.models.LowerBoundModel`, whose population
    candidate matrix is rho^2 * lambda_0d * B B^T.
    """
    from .models import as_generator, lambda_0d, sample_lower_bound

    if n < 1 + 4 * H / gamma:
        raise PreconditionViolated(f"n={n} is below 1 + 4H/gamma = {1 + 4 * H / gamma:g}")
    gen = as_generator(rng)
    lam0 = lambda_0d(model.d, 10**6, gen).value
    target = model.rho**2 * lam0
    beta = model.B[:, 0]
    hits = 0
    for _ in range(reps):
        data, _ = sample_lower_bound(model, n, gen)
        lam_hat = candidate_matrix(data, sliced_partition(data, H)).lambda_hat
        if abs(beta @ lam_hat @ beta - target) <= 0.5 * target:
            hits += 1
    return hits / reps
