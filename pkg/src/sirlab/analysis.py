"""Conditional-mean covariances, entropy, and the gSNR decay bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import HypothesisViolated, InvalidInput
from .models import McEstimate, as_generator

N_BATCHES = 20


@dataclass(frozen=True)
class DiscreteConditional:
    labels: np.ndarray
    counts: np.ndarray
    group_means: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def discrete_conditional(Z, W) -> DiscreteConditional:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    W = np.asarray(W).reshape(-1)
    if Z.shape[0] != W.shape[0]:
        raise InvalidInput("Z and W must have the same number of rows")
    labels, inv = np.unique(W, return_inverse=True)
    counts = np.bincount(inv, minlength=labels.size)
    sums = np.column_stack(
        [np.bincount(inv, weights=Z[:, j], minlength=labels.size) for j in range(Z.shape[1])]
    )
    return DiscreteConditional(labels, counts, sums / counts[:, None])


def cov_conditional_mean(Z, W) -> np.ndarray:
    """Plug-in Cov(E[Z | W]) = sum_w p_w (zbar_w - zbar)(zbar_w - zbar)^T."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] < 2:
        raise InvalidInput("need at least 2 samples")
    dc = discrete_conditional(Z, W)
    pw = dc.counts / dc.n
    centered = dc.group_means - pw @ dc.group_means
    C = (centered * pw[:, None]).T @ centered
    return 0.5 * (C + C.T)


def entropy(W) -> float:
    """Plug-in entropy in nats."""
    W = np.asarray(W).reshape(-1)
    if W.size < 1:
        raise InvalidInput("need at least one label")
    _, counts = np.unique(W, return_counts=True)
    pw = counts / W.size
    return float(-np.sum(pw * np.log(pw)))


@dataclass(frozen=True)
class EntropyBoundResult:
    lhs: float
    rhs: float
    stderr: float
    margin: float
    passed: bool


def entropy_bound_check(Z, W) -> EntropyBoundResult:
    """Test lambda_min(Cov(E[Z|W])) <= 37 Ent(W) / d, with 3 standard errors of slack.

    The standard error of the left side comes from 20 contiguous batches. The
    mass hypothesis is rejected only when some label sits more than 3 binomial
    standard errors above 1/2, so a population mass of exactly 1/2 (as in the
    lower-bound construction) is not rejected on sampling noise.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    W = np.asarray(W).reshape(-1)
    _, counts = np.unique(W, return_counts=True)
    pw = counts / W.size
    if np.any(pw - 3 * np.sqrt(pw * (1 - pw) / W.size) >= 0.5):
        raise HypothesisViolated(f"label mass {pw.max():.4g} is significantly >= 1/2")
    d = Z.shape[1]
    lhs = float(np.linalg.eigvalsh(cov_conditional_mean(Z, W))[0])
    rhs = 37 * entropy(W) / d
    batches = np.array_split(np.arange(W.size), N_BATCHES)
    vals = [np.linalg.eigvalsh(cov_conditional_mean(Z[b], W[b]))[0] for b in batches]
    se = float(np.std(vals, ddof=1) / math.sqrt(N_BATCHES))
    margin = rhs + 3 * se - lhs
    return EntropyBoundResult(lhs, rhs, se, margin, margin >= 0)


@dataclass(frozen=True)
class DecayBound:
    gsnr: McEstimate
    bound: float


def joint_basic_gsnr(d: int, samples: int, rng) -> McEstimate:
    """d^{-1} (E max_i |Z_i|)^2, the gSNR of the unrestricted signed-argmax construction."""
    gen = as_generator(rng)
    s1 = s2 = 0.0
    done = 0
    while done < samples:
        k = min(200_000, samples - done)
        v = np.max(np.abs(gen.standard_normal((k, d))), axis=1)
        s1 += math.fsum(v)
        s2 += math.fsum(v * v)
        done += k
    e = s1 / samples
    se = math.sqrt(max(s2 / samples - e * e, 0.0) / (samples - 1))
    return McEstimate(e * e / d, 2 * e * se / d)


def decay_bound_check(d: int, samples: int, rng) -> DecayBound:
    if d < 2:
        raise InvalidInput(f"need d >= 2, got {d}")
    return DecayBound(joint_basic_gsnr(d, samples, rng), 2 * math.log(2 * d) / d)
