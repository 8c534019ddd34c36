import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sirlab import models
from sirlab.analysis import cov_conditional_mean
from sirlab.errors import DegenerateDirection, InvalidInput
from sirlab.linalg import general_loss
from sirlab.slicing import (
    Dataset,
    candidate_matrix,
    gamma_partition_check,
    read_dataset_csv,
    slice_sizes,
    sliced_partition,
    wssc_ratio,
    write_dataset_csv,
)


def _data(Y, p=1):
    Y = np.asarray(Y, dtype=float)
    return Dataset(np.zeros((Y.size, p)), Y)


def test_partition_sort_order():
    part = sliced_partition(_data([3, 1, 2]), 3)
    np.testing.assert_array_equal(part.assignment, [2, 0, 1])


def test_partition_remainder_goes_first():
    part = sliced_partition(_data(np.arange(5.0)), 2)
    np.testing.assert_array_equal(part.sizes, [3, 2])
    np.testing.assert_array_equal(part.assignment, [0, 0, 0, 1, 1])
    np.testing.assert_array_equal(slice_sizes(11, 4), [3, 3, 3, 2])


def test_partition_ties_are_stable():
    Y = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
    a = sliced_partition(_data(Y), 3).assignment
    b = sliced_partition(_data(Y), 3).assignment
    np.testing.assert_array_equal(a, b)
    # zeros in input order first, then ones
    np.testing.assert_array_equal(a, [1, 0, 2, 0, 2, 1])


def test_partition_rejects_bad_H():
    with pytest.raises(InvalidInput):
        sliced_partition(_data([1, 2]), 3)
    with pytest.raises(InvalidInput):
        sliced_partition(_data([1, 2]), 0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=60), st.data())
def test_partition_invariants(ys, data):
    Y = np.array(ys, dtype=float)
    H = data.draw(st.integers(1, Y.size))
    part = sliced_partition(_data(Y), H)
    sizes = np.bincount(part.assignment, minlength=H)
    assert sizes.sum() == Y.size and sizes.max() - sizes.min() <= 1
    np.testing.assert_array_equal(sizes, part.sizes)
    for h in range(H - 1):
        assert Y[part.assignment == h].max() <= Y[part.assignment == h + 1].min()
    # ties broken by original index: the order is a stable sort
    np.testing.assert_array_equal(part.order, np.argsort(Y, kind="stable"))


def test_candidate_constant_X():
    data = Dataset(np.ones((10, 3)), np.arange(10.0))
    cand = candidate_matrix(data, sliced_partition(data, 5))
    np.testing.assert_array_equal(cand.lambda_hat, np.zeros((3, 3)))


def test_candidate_hand_computed():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    data = Dataset(x[:, None], x)
    cand = candidate_matrix(data, sliced_partition(data, 2))
    np.testing.assert_allclose(cand.slice_means.ravel(), [-1, 1])
    np.testing.assert_allclose(cand.lambda_hat, [[1.0]])


def test_candidate_psd_and_rank(gen):
    X = gen.standard_normal((200, 6))
    data = Dataset(X, gen.standard_normal(200))
    cand = candidate_matrix(data, sliced_partition(data, 3))
    w = np.linalg.eigvalsh(cand.lambda_hat)
    assert w.min() >= -1e-14
    # centered slice means sum to zero, so the rank is at most H - 1
    assert np.sum(w > 1e-12 * w.max()) <= 2
    np.testing.assert_allclose(cand.eig.eigenvalues, w[::-1], atol=1e-14)


def test_candidate_noise_floor(gen):
    n, p, H = 20000, 5, 10
    tops = []
    for _ in range(50):
        data = Dataset(gen.standard_normal((n, p)), gen.standard_normal(n))
        tops.append(candidate_matrix(data, sliced_partition(data, H)).eig.eigenvalues[0])
    assert np.mean(tops) <= 6 * max(p, H) / n


def test_candidate_row_permutation_invariant(gen):
    X = gen.standard_normal((300, 4))
    Y = X[:, 0] + 0.1 * gen.standard_normal(300)
    perm = gen.permutation(300)
    a = candidate_matrix(Dataset(X, Y), sliced_partition(Dataset(X, Y), 7)).lambda_hat
    b = candidate_matrix(Dataset(X[perm], Y[perm]), sliced_partition(Dataset(X[perm], Y[perm]), 7)).lambda_hat
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_noiseless_linear_recovery(gen):
    n, p = 10**5, 10
    beta = gen.standard_normal(p)
    beta /= np.linalg.norm(beta)
    X = gen.standard_normal((n, p))
    data = Dataset(X, 2 * X @ beta + 1)
    top = candidate_matrix(data, sliced_partition(data, 10)).eig.top(1)
    assert general_loss(top, beta[:, None]) <= 0.05


def test_gamma_partition_on_own_sample(gen):
    n, H = 1000, 10
    data = _data(gen.uniform(size=n))
    res = gamma_partition_check(data, sliced_partition(data, H), 2 * H / n, data)
    assert res.passed
    assert np.all(np.abs(res.masses - 1 / H) <= 1 / n)


def test_gamma_zero_needs_exact_masses(gen):
    data = _data(np.arange(100.0))
    assert gamma_partition_check(data, sliced_partition(data, 10), 0.0, data).passed
    other = _data(gen.uniform(size=999))
    assert not gamma_partition_check(other, sliced_partition(other, 10), 0.0, _data(gen.uniform(size=1000))).passed


def test_gamma_out_of_range():
    data = _data(np.arange(10.0))
    with pytest.raises(InvalidInput):
        gamma_partition_check(data, sliced_partition(data, 2), 1.0, data)


def test_gamma_partition_pass_rate(gen):
    n, H, passes = 10**5, 10, 0
    for _ in range(50):
        data = _data(gen.uniform(size=n))
        passes += gamma_partition_check(data, sliced_partition(data, H), 0.1, _data(gen.uniform(size=n))).passed
    assert passes / 50 >= 0.95


def test_wssc_constant_within_slices():
    data = _data(np.arange(20.0))
    part = sliced_partition(data, 4)
    assert wssc_ratio(part.assignment.astype(float), data, part, [np.ones(1)]) == 0.0


def test_wssc_uniform_linear_curve(gen):
    H = 10
    data = _data(gen.uniform(size=200_000))
    r = wssc_ratio(data.Y, data, sliced_partition(data, H), [np.ones(1)])
    assert abs(r - 1 / H**2) <= 0.1 / H**2


def test_wssc_degenerate():
    data = _data(np.arange(10.0))
    with pytest.raises(DegenerateDirection):
        wssc_ratio(np.ones(10), data, sliced_partition(data, 2), [np.ones(1)])


def _lower_bound_latent(d, rho, n, gen):
    m = models.LowerBoundModel.canonical(d, d, rho)
    X = gen.standard_normal((n, d))
    xi = gen.standard_normal((n, d))
    Z = rho * X + math.sqrt(1 - rho**2) * xi
    W = models.psi(Z, m.m_d)
    Y = W + gen.uniform(-0.5, 0.5, n)
    return Z, W, Dataset(Z, Y)


def _signed_onehot(W, d):
    K = np.zeros((W.size, d))
    nz = W != 0
    K[nz, np.abs(W[nz]) - 1] = np.sign(W[nz])
    return K


@pytest.mark.parametrize("d,H", [(2, 16), (3, 24)])
def test_wssc_lower_bound_curve(gen, d, H):
    # the curve l(y) is proportional to the signed one-hot of the nearest integer label
    _, W, data = _lower_bound_latent(d, 0.6, 200_000, gen)
    dirs = list(np.eye(d)) + list(gen.standard_normal((20, d)))
    r = wssc_ratio(_signed_onehot(W, d), data, sliced_partition(data, H), dirs)
    assert r <= 4 * d / H * 1.1


def test_discrete_slice_approximation(gen):
    # (1 - (1+gamma)/tau) var(b^T E[Z|Y]) <= var(b^T E[Z|slice]) + 3 SE
    d, H, gamma, n = 2, 16, 0.1, 200_000
    Z, W, data = _lower_bound_latent(d, 0.6, n, gen)
    part = sliced_partition(data, H)
    tau = 1 / wssc_ratio(_signed_onehot(W, d), data, part, list(np.eye(d)))
    beta = np.eye(d)[0]
    full = beta @ cov_conditional_mean(Z, W) @ beta  # E[Z|Y] = E[Z|W] here
    sliced = beta @ cov_conditional_mean(Z, part.assignment) @ beta
    batches = np.array_split(np.arange(n), 20)
    vals = [beta @ cov_conditional_mean(Z[b], part.assignment[b]) @ beta for b in batches]
    se = np.std(vals, ddof=1) / math.sqrt(20)
    assert (1 - (1 + gamma) / tau) * full <= sliced + 3 * se


def test_dataset_validation():
    with pytest.raises(InvalidInput):
        Dataset(np.ones((3, 2)), np.ones(2))
    with pytest.raises(InvalidInput):
        Dataset(np.array([[np.nan]]), np.ones(1))
    with pytest.raises(InvalidInput):
        Dataset(np.ones((1, 1)), np.array([np.nan]))
    with pytest.raises(InvalidInput):
        Dataset(np.ones((0, 2)), np.ones(0))
    d = Dataset(np.ones((2, 1)), np.array([np.inf, -np.inf]))
    assert d.n == 2 and d.p == 1


def test_csv_roundtrip(tmp_path, gen):
    data = Dataset(gen.standard_normal((7, 3)), gen.standard_normal(7))
    path = tmp_path / "d.csv"
    write_dataset_csv(data, path)
    back = read_dataset_csv(path)
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.Y, data.Y)


def test_csv_rejects_non_numeric(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2,y\n1,2,3\n4,abc,6\n")
    with pytest.raises(InvalidInput, match=r"row 3, column x2"):
        read_dataset_csv(path)


@pytest.mark.parametrize("text", ["a,b,y\n1,2,3\n", "x1,x2\n1,2\n", "x1,y\n1,2,3\n", "x1,y\n", ""])
def test_csv_rejects_bad_layout(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(InvalidInput):
        read_dataset_csv(path)
