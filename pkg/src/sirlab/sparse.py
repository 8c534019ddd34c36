"""Two-fold aggregation estimator over all size-s supports, and the known-support oracle."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import EnumerationTooLarge, InvalidInput, SingularCovariance
from .linalg import DEFAULT_EIG_FLOOR, sample_covariance
from .slicing import Dataset, candidate_matrix, sliced_partition

DEFAULT_ENUMERATION_CAP = 10**6
_BATCH = 4096


@dataclass(frozen=True)
class SparseConfig:
    s: int
    d: int
    H: int
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    eig_floor: float = DEFAULT_EIG_FLOOR

    def __post_init__(self):
        if not self.d < self.s:
            raise InvalidInput(f"need d < s, got d={self.d}, s={self.s}")
        if self.H < self.d:
            raise InvalidInput(f"need H >= d, got H={self.H}")


@dataclass(frozen=True)
class AggregationFit:
    basis: np.ndarray
    selected_support: tuple[int, ...]
    oracle_score: float
    n_candidates: int


@dataclass(frozen=True)
class _Halves:
    lam1: np.ndarray
    lam2: np.ndarray
    sigma1: np.ndarray


def split_halves(data: Dataset, split_seed) -> tuple[Dataset, Dataset]:
    """Drop a trailing odd sample, then split by a seeded random permutation into equal halves."""
    n = data.n - data.n % 2
    perm = np.random.default_rng(split_seed).permutation(n)
    return data.subset(perm[: n // 2]), data.subset(perm[n // 2 :])


def _prepare(data: Dataset, H: int, split_seed, s: int) -> _Halves:
    first, second = split_halves(data, split_seed)
    if first.n <= s:
        raise SingularCovariance(f"half-sample size {first.n} must exceed s={s}")
    lam1 = candidate_matrix(first, sliced_partition(first, H)).lambda_hat
    lam2 = candidate_matrix(second, sliced_partition(second, H)).lambda_hat
    return _Halves(lam1, lam2, sample_covariance(first.X))


def _restricted_fits(halves: _Halves, supports: np.ndarray, d: int, floor: float):
    """Whitened restricted SIR for a batch of supports (k x s index array).

    Returns bases (k x s x d) and held-out scores Tr(B^T L2 B).
    """
    ix = supports[:, :, None], supports[:, None, :]
    S = halves.sigma1[ix]
    w, Q = np.linalg.eigh(S)
    bad = ~(w[:, -1] > 0) | (w[:, 0] <= floor * w[:, -1])
    if np.any(bad):
        L = tuple(int(i) for i in supports[np.argmax(bad)])
        raise SingularCovariance(f"restricted sample covariance is singular on support {L}")
    Wm = (Q / np.sqrt(w)[:, None, :]) @ np.swapaxes(Q, 1, 2)
    M = Wm @ halves.lam1[ix] @ Wm
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    _, V = np.linalg.eigh(M)
    B = Wm @ V[:, :, ::-1][:, :, :d]
    scores = np.einsum("kid,kij,kjd->k", B, halves.lam2[ix], B)
    return B, scores


def _pad(B_L: np.ndarray, support, p: int) -> np.ndarray:
    B = np.zeros((p, B_L.shape[1]))
    B[list(support)] = B_L
    return B


def fit_aggregation(data: Dataset, cfg: SparseConfig, split_seed) -> AggregationFit:
    """Pick the support whose half-1 fit scores best on the half-2 candidate matrix.

    Supports are enumerated lexicographically; ties keep the earliest.
    """
    p, s = data.p, cfg.s
    if s > p:
        raise InvalidInput(f"s={s} exceeds p={p}")
    total = math.comb(p, s)
    if total > cfg.enumeration_cap:
        raise EnumerationTooLarge(total, cfg.enumeration_cap)
    halves = _prepare(data, cfg.H, split_seed, s)
    best_score, best_L, best_B = -np.inf, None, None
    combos = itertools.combinations(range(p), s)
    while True:
        batch = np.array(list(itertools.islice(combos, _BATCH)), dtype=np.intp)
        if batch.size == 0:
            break
        B, scores = _restricted_fits(halves, batch, cfg.d, cfg.eig_floor)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score, best_L, best_B = float(scores[k]), tuple(int(i) for i in batch[k]), B[k]
    return AggregationFit(_pad(best_B, best_L, p), best_L, best_score, total)


def fit_oracle(data: Dataset, support, d: int, H: int, split_seed, eig_floor: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Restricted whitened SIR on half 1 with the support fixed; zero-padded to p rows."""
    support = tuple(sorted(int(i) for i in support))
    if len(support) < d:
        raise InvalidInput(f"support of size {len(support)} is smaller than d={d}")
    if len(set(support)) != len(support) or support[0] < 0 or support[-1] >= data.p:
        raise InvalidInput(f"invalid support {support} for p={data.p}")
    halves = _prepare(data, H, split_seed, len(support))
    B, _ = _restricted_fits(halves, np.array([support], dtype=np.intp), d, eig_floor)
    return _pad(B[0], support, data.p)


def score_support(data: Dataset, support, d: int, H: int, split_seed) -> float:
    """Held-out score of one support, computed independently of the batched enumeration."""
    from .linalg import spd_inv_sqrt, sym_eig

    support = list(support)
    first, second = split_halves(data, split_seed)
    lam1 = candidate_matrix(first, sliced_partition(first, H)).lambda_hat
    lam2 = candidate_matrix(second, sliced_partition(second, H)).lambda_hat
    S = sample_covariance(first.X)[np.ix_(support, support)]
    W = spd_inv_sqrt(S)
    V = sym_eig(W @ lam1[np.ix_(support, support)] @ W).top(d)
    B = W @ V
    return float(np.trace(B.T @ lam2[np.ix_(support, support)] @ B))
