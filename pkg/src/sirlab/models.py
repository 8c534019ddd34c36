"""Generative models and the analytic quantities of the lower-bound construction."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla
from scipy.special import gammainc

from .errors import Degenerate, FactorizationFailed, InvalidInput, ThetaTooLarge
from .slicing import Dataset

M_P = 15
MC_CHUNK = 200_000
DEFAULT_GP_CAP = 20_000


# -- randomness ---------------------------------------------------------------

def stream_id(*keys) -> int:
    """Stable 64-bit id for an arbitrary tuple of keys (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(repr(keys).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class Rng:
    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, *keys) -> "Rng":
        return Rng(self.master_seed, stream_id(self.stream_id, *keys))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Rng):
        return rng.generator()
    return np.random.default_rng(rng)


class McEstimate(NamedTuple):
    value: float
    stderr: float


def canonical_basis(p: int, d: int) -> np.ndarray:
    """[e_1, ..., e_d] in R^p."""
    return np.eye(p)[:, :d]


# -- synthetic multiple-index models --------------------------------------------

def m1_link(X: np.ndarray) -> np.ndarray:
    return (
        X[:, 0]
        + np.exp(X[:, 1])
        + np.log(np.abs(X[:, 2] + 1) + 1)
        + np.sin(X[:, 3])
        + np.arctan(X[:, 4])
    )


def m2_link(X: np.ndarray) -> np.ndarray:
    # No clipping near X3 = -1; overflow produces +-inf, which is kept.
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return (
            X[:, 0] ** 3
            + X[:, 1] / (1 + X[:, 2]) ** 2
            + np.sign(X[:, 3]) * np.log(np.abs(X[:, 4] + 0.02) + 5)
        )


def _sample_link(link, n: int, rng, noise_sd: float = 0.01) -> Dataset:
    if n < 1:
        raise InvalidInput(f"n must be >= 1, got {n}")
    gen = as_generator(rng)
    X = gen.standard_normal((n, M_P))
    eps = gen.standard_normal(n)
    return Dataset(X, link(X) + noise_sd * eps)


def sample_m1(n: int, rng) -> Dataset:
    """Five-index model M1 on X ~ N(0, I_15)."""
    return _sample_link(m1_link, n, rng)


def sample_m2(n: int, rng) -> Dataset:
    """Five-index model M2 on X ~ N(0, I_15)."""
    return _sample_link(m2_link, n, rng)


def sample_sparse_sine(n: int, p: int, s: int, rng, freq: float = 2.0, noise_sd: float = 0.1):
    """Single-index Y = sin(freq * beta^T X) + noise with beta uniform on the first s coordinates.

    Returns the dataset and beta.
    """
    gen = as_generator(rng)
    beta = np.zeros(p)
    beta[:s] = 1 / math.sqrt(s)
    X = gen.standard_normal((n, p))
    eps = gen.standard_normal(n)
    return Dataset(X, np.sin(freq * (X @ beta)) + noise_sd * eps), beta


# -- Gaussian-process link ------------------------------------------------------

@dataclass(frozen=True)
class GpLinkSpec:
    """Squared-exponential GP link, kernel exp(-|x - x'|^2 / 2)."""

    noise_sd: float = 0.01
    jitter: float = 1e-10
    max_jitter: float = 1e-6

    def __post_init__(self):
        if not self.jitter > 0:
            raise InvalidInput("jitter must be positive")


def se_kernel(points: np.ndarray) -> np.ndarray:
    sq = np.sum(points * points, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(D, 0.0, out=D)
    np.multiply(D, -0.5, out=D)
    return np.exp(D, out=D)


def sample_gp_function(points, rng, spec: GpLinkSpec = GpLinkSpec()) -> np.ndarray:
    """Joint draw of f at ``points`` (n x d) from the zero-mean SE Gaussian process."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    gen = as_generator(rng)
    n = pts.shape[0]
    K = se_kernel(pts)
    jitter = spec.jitter
    while True:
        try:
            L = sla.cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
            break
        except sla.LinAlgError:
            jitter *= 10
            if jitter > spec.max_jitter * (1 + 1e-9):
                raise FactorizationFailed(
                    f"kernel Cholesky failed with jitter up to {spec.max_jitter:g}"
                ) from None
    return L @ gen.standard_normal(n)


def sample_gp_model(
    n: int,
    d: int,
    rng,
    spec: GpLinkSpec = GpLinkSpec(),
    p: int = M_P,
    gp_cap: int = DEFAULT_GP_CAP,
) -> Dataset:
    """Model M3: Y = f(B^T X) + noise with f drawn from the SE Gaussian process and B = [e_1..e_d]."""
    if n > gp_cap:
        raise InvalidInput(f"n={n} exceeds gp_cap={gp_cap} (Cholesky is O(n^3))")
    if not 1 <= d <= p:
        raise InvalidInput(f"need 1 <= d <= p, got d={d}, p={p}")
    gen = as_generator(rng)
    X = gen.standard_normal((n, p))
    f = sample_gp_function(X[:, :d], gen, spec)
    Y = f + spec.noise_sd * gen.standard_normal(n)
    return Dataset(X, Y)


# -- chi-square median and the label functions ----------------------------------

def chi2_median(d: int, tol: float = 1e-12) -> float:
    """Median of the chi-square distribution with d degrees of freedom, by bisection."""
    if d < 1:
        raise InvalidInput(f"d must be >= 1, got {d}")
    a = d / 2.0
    lo, hi = 0.0, float(d)  # median < mean = d
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gammainc(a, mid / 2.0) < 0.5:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def _signed_argmax(Z: np.ndarray) -> np.ndarray:
    A = np.abs(Z)
    i = np.argmax(A, axis=1)
    rows = np.arange(Z.shape[0])
    top = A[rows, i]
    tied = np.count_nonzero(A == top[:, None], axis=1) > 1
    out = (np.sign(Z[rows, i]) * (i + 1)).astype(np.int64)
    out[tied] = 0
    return out


def psi0(z) -> np.ndarray | int:
    """sgn(z_i) * i for the unique largest |z_i| (1-indexed), else 0. Rows of a 2-D input are mapped."""
    Z = np.asarray(z, dtype=float)
    single = Z.ndim == 1
    out = _signed_argmax(np.atleast_2d(Z))
    return int(out[0]) if single else out


def psi(z, m_d: float) -> np.ndarray | int:
    """As :func:`psi0`, but 0 outside the ball |z|^2 <= m_d."""
    Z = np.asarray(z, dtype=float)
    single = Z.ndim == 1
    Z2 = np.atleast_2d(Z)
    out = _signed_argmax(Z2)
    out[np.einsum("ij,ij->i", Z2, Z2) > m_d] = 0
    return int(out[0]) if single else out


# -- lower-bound construction ---------------------------------------------------

@dataclass(frozen=True)
class LowerBoundModel:
    """X ~ N(0, I_p); Z = rho B^T X + sqrt(1 - rho^2) xi; W = psi(Z); Y = W + Unif(-sigma, sigma)."""

    p: int
    d: int
    B: np.ndarray
    rho: float
    sigma: float = 0.5
    m_d: float = field(default=float("nan"))

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.shape != (self.p, self.d):
            raise InvalidInput(f"B must be {self.p} x {self.d}, got {B.shape}")
        if np.max(np.abs(B.T @ B - np.eye(self.d))) > 1e-8:
            raise InvalidInput("B must have orthonormal columns")
        if not 0 <= self.rho < 1:
            raise InvalidInput(f"rho must lie in [0, 1), got {self.rho}")
        if not 0 < self.sigma <= 0.5:
            raise InvalidInput(f"sigma must lie in (0, 1/2], got {self.sigma}")
        m = self.m_d if not math.isnan(self.m_d) else chi2_median(self.d)
        if not 0 < m <= self.d * math.exp(-1 / (3 * self.d)):
            raise InvalidInput(f"m_d={m} outside (0, d e^(-1/(3d))]")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "m_d", m)

    @classmethod
    def canonical(cls, p: int, d: int, rho: float, sigma: float = 0.5) -> "LowerBoundModel":
        return cls(p, d, canonical_basis(p, d), rho, sigma)


def sample_lower_bound(model: LowerBoundModel, n: int, rng):
    """Draw n samples; returns the dataset and the latent labels W."""
    gen = as_generator(rng)
    X = gen.standard_normal((n, model.p))
    xi = gen.standard_normal((n, model.d))
    eta = gen.uniform(-model.sigma, model.sigma, n)
    Z = model.rho * (X @ model.B) + math.sqrt(1 - model.rho**2) * xi
    W = psi(Z, model.m_d)
    return Dataset(X, W + eta), W


def sample_joint_basic(n: int, p: int, d: int, rng):
    """Y = psi0(B^T X) + Unif(-1/2, 1/2) with B = [e_1..e_d]; returns the dataset and W."""
    gen = as_generator(rng)
    X = gen.standard_normal((n, p))
    eta = gen.uniform(-0.5, 0.5, n)
    W = psi0(X[:, :d])
    return Dataset(X, W + eta), W


def _normal_chunks(d: int, samples: int, gen: np.random.Generator):
    done = 0
    while done < samples:
        k = min(MC_CHUNK, samples - done)
        yield gen.standard_normal((k, d))
        done += k


def max_abs_in_ball(d: int, samples: int, rng) -> McEstimate:
    """Monte Carlo E[max_i |Z_i| 1{|Z|^2 <= m_d}] for Z ~ N(0, I_d)."""
    gen = as_generator(rng)
    m = chi2_median(d)
    s1 = s2 = 0.0
    for Z in _normal_chunks(d, samples, gen):
        v = np.max(np.abs(Z), axis=1)
        v[np.einsum("ij,ij->i", Z, Z) > m] = 0.0
        s1 += math.fsum(v)
        s2 += math.fsum(v * v)
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0)
    return McEstimate(mean, math.sqrt(var / (samples - 1)))


def lambda_0d(d: int, samples: int, rng) -> McEstimate:
    """Monte Carlo (2d)^{-1} E(Z_1 | Z in A_1)^2, estimated from the cone A_1 alone."""
    if samples < 10**5:
        raise InvalidInput(f"need at least 1e5 draws, got {samples}")
    gen = as_generator(rng)
    m = chi2_median(d)
    hits = 0
    s1 = s2 = 0.0
    for Z in _normal_chunks(d, samples, gen):
        z1 = Z[psi(Z, m) == 1, 0]
        hits += z1.size
        s1 += math.fsum(z1)
        s2 += math.fsum(z1 * z1)
    r = s1 / hits
    se_r = math.sqrt(max(s2 / hits - r * r, 0.0) / (hits - 1))
    return McEstimate(r * r / (2 * d), abs(r) * se_r / d)


def gsnr_formula(d: int, rho: float, samples: int, rng) -> McEstimate:
    """Closed-form gSNR 2 rho^2 (E[max|Z_i| 1{|Z|^2 <= m_d}])^2 / d, by Monte Carlo."""
    if not 0 <= rho <= 1:
        raise InvalidInput(f"rho must lie in [0, 1], got {rho}")
    e, se = max_abs_in_ball(d, samples, rng)
    return McEstimate(2 * rho**2 * e * e / d, 4 * rho**2 * abs(e) * se / d)


def theta_to_rho(theta: float, d: int, samples: int, rng) -> float:
    """rho = theta sqrt(d) / E[max|Z_i| 1{..}], which makes the gSNR equal 2 theta^2."""
    if theta < 0:
        raise InvalidInput(f"theta must be nonnegative, got {theta}")
    if theta == 0:
        return 0.0
    e, _ = max_abs_in_ball(d, samples, rng)
    rho = theta * math.sqrt(d) / e
    if rho >= 1:
        raise ThetaTooLarge(f"theta={theta} gives rho={rho:.4f} >= 1 at d={d}")
    return rho


def _joint_cov(B: np.ndarray, rho: float) -> np.ndarray:
    p, d = B.shape
    S = np.eye(p + d)
    S[:p, p:] = rho * B
    S[p:, :p] = rho * B.T
    return S


def exact_kl_xz(B1, B2, rho: float) -> float:
    """KL divergence between the Gaussian (X, Z) joints under bases B1 and B2."""
    B1 = np.asarray(B1, dtype=float)
    B2 = np.asarray(B2, dtype=float)
    if B1.shape != B2.shape:
        raise InvalidInput(f"basis shapes differ: {B1.shape} vs {B2.shape}")
    S1, S2 = _joint_cov(B1, rho), _joint_cov(B2, rho)
    try:
        L1 = np.linalg.cholesky(S1)
        L2 = np.linalg.cholesky(S2)
    except np.linalg.LinAlgError:
        raise Degenerate(f"joint covariance not positive definite at rho={rho}") from None
    k = S1.shape[0]
    M = sla.solve_triangular(L2, L1, lower=True)
    logdet1 = 2 * np.sum(np.log(np.diag(L1)))
    logdet2 = 2 * np.sum(np.log(np.diag(L2)))
    return float(0.5 * (np.sum(M * M) - k + logdet2 - logdet1))


def kl_closed_form(B1, B2, rho: float) -> float:
    D = np.asarray(B1, dtype=float) - np.asarray(B2, dtype=float)
    return float(rho**2 / (2 * (1 - rho**2)) * np.sum(D * D))
