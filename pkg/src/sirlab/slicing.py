"""Sliced partitions of a sample by Y-order and the SIR candidate matrix."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import DegenerateDirection, InvalidInput, SirlabError
from .linalg import EigenDecomposition, sym_eig

DEFAULT_GAMMA = 0.1


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InvalidInput(f"X must be n x p, got shape {X.shape}")
        if X.shape[0] != Y.shape[0]:
            raise InvalidInput(f"X has {X.shape[0]} rows but Y has {Y.shape[0]} entries")
        if X.shape[0] < 1:
            raise InvalidInput("dataset is empty")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("X has non-finite entries")
        # +-inf responses are allowed: heavy-tailed links can overflow and such
        # samples simply sort into the extreme slices.
        if np.any(np.isnan(Y)):
            raise InvalidInput("Y has NaN entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx])


def read_dataset_csv(path) -> Dataset:
    """Load a CSV with header ``x1..xp,y``; non-numeric cells raise with their location."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidInput(f"{path}: empty file") from None
        expected = [f"x{j + 1}" for j in range(len(header) - 1)] + ["y"]
        if len(header) < 2 or header != expected:
            raise InvalidInput(f"{path}: header must be x1..xp,y, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInput(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise InvalidInput(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col}"
                    ) from None
            rows.append(values)
    if not rows:
        raise InvalidInput(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, :-1], arr[:, -1])


def write_dataset_csv(data: Dataset, path) -> None:
    header = [f"x{j + 1}" for j in range(data.p)] + ["y"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, y in zip(data.X, data.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


@dataclass(frozen=True)
class SlicedPartition:
    H: int
    assignment: np.ndarray
    boundaries: np.ndarray
    sizes: np.ndarray
    order: np.ndarray = field(repr=False)

    def slice_of(self, y) -> np.ndarray:
        """Slice index of new responses under the interval partition (a, b]."""
        return np.searchsorted(self.boundaries, np.asarray(y, dtype=float), side="left")


def slice_sizes(n: int, H: int) -> np.ndarray:
    sizes = np.full(H, n // H, dtype=np.int64)
    sizes[: n % H] += 1
    return sizes


def sliced_partition(data: Dataset, H: int) -> SlicedPartition:
    """Split the sample into H slices of near-equal size by the order of Y.

    The first ``n mod H`` slices get one extra sample; ties in Y keep input order.
    """
    n = data.n
    if not 1 <= H <= n:
        raise InvalidInput(f"need 1 <= H <= n, got H={H}, n={n}")
    order = np.argsort(data.Y, kind="stable")
    sizes = slice_sizes(n, H)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.repeat(np.arange(H), sizes)
    ends = np.cumsum(sizes)
    boundaries = data.Y[order[ends[:-1] - 1]]
    return SlicedPartition(H, assignment, boundaries, sizes, order)


def slice_means(X: np.ndarray, part: SlicedPartition) -> np.ndarray:
    H = part.H
    if np.any(part.sizes == 0):
        raise SirlabError("empty slice in partition")
    n = part.assignment.size
    indicator = sparse.csr_matrix(
        (np.ones(n), (part.assignment, np.arange(n))), shape=(H, n)
    )
    return np.asarray(indicator @ X) / part.sizes[:, None]


@dataclass(frozen=True)
class CandidateMatrix:
    lambda_hat: np.ndarray
    slice_means: np.ndarray
    eig: EigenDecomposition


def candidate_matrix(data: Dataset, part: SlicedPartition) -> CandidateMatrix:
    """Average outer product of the globally centered slice means."""
    means = slice_means(data.X, part) - data.X.mean(axis=0)
    lam = means.T @ means / part.H
    lam = 0.5 * (lam + lam.T)
    return CandidateMatrix(lam, means, sym_eig(lam))


@dataclass(frozen=True)
class GammaPartitionResult:
    passed: bool
    masses: np.ndarray


def gamma_partition_check(
    data: Dataset, part: SlicedPartition, gamma: float, ref_sample: Dataset
) -> GammaPartitionResult:
    """Whether every slice interval holds Y-mass in [(1-gamma)/H, (1+gamma)/H].

    Masses are estimated out-of-sample from ``ref_sample``.
    """
    if not 0 <= gamma < 1:
        raise InvalidInput(f"gamma must lie in [0, 1), got {gamma}")
    H = part.H
    idx = part.slice_of(ref_sample.Y)
    masses = np.bincount(idx, minlength=H) / ref_sample.n
    lo, hi = (1 - gamma) / H, (1 + gamma) / H
    passed = bool(np.all((masses >= lo) & (masses <= hi)))
    return GammaPartitionResult(passed, masses)


def wssc_ratio(
    curve_values, data: Dataset, part: SlicedPartition, directions: Sequence
) -> float:
    """Worst-case ratio of mean within-slice variance to total variance of beta^T kappa(Y).

    ``curve_values`` holds kappa evaluated at each sample (n x q). The curve is
    weakly sliced stable with parameter tau on this partition iff the result is
    at most 1/tau.
    """
    K = np.asarray(curve_values, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    if K.shape[0] != data.n:
        raise InvalidInput("curve values must have one row per sample")
    worst = 0.0
    for beta in directions:
        beta = np.asarray(beta, dtype=float).reshape(-1)
        u = K @ (beta / np.linalg.norm(beta))
        total = u.var()
        if not total > 0:
            raise DegenerateDirection("beta^T kappa(Y) has zero variance")
        s1 = np.bincount(part.assignment, weights=u, minlength=part.H)
        r = u - (s1 / part.sizes)[part.assignment]
        within = np.bincount(part.assignment, weights=r * r, minlength=part.H) / part.sizes
        worst = max(worst, float(within.mean() / total))
    return worst
