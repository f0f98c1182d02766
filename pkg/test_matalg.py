import itertools

import numpy as np
import pytest

from matalg import (
    DegenerateSelectionError,
    NonFiniteError,
    cgs_solve,
    cur,
    maxvol,
    qdeim,
    svd_truncate,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def low_rank(rng, m, n, r):
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


def test_svd_truncate_tail_bound(rng):
    M = rng.standard_normal((30, 20))
    U, S, Vh, rank = svd_truncate(M, eps=0.3)
    err = np.linalg.norm(M - (U * S) @ Vh)
    assert err <= 0.3 * np.linalg.norm(M) + 1e-12
    assert rank < 20


def test_svd_truncate_exact_rank(rng):
    M = low_rank(rng, 12, 9, 3)
    _, _, _, rank = svd_truncate(M, eps=1e-10)
    assert rank == 3


def test_svd_truncate_floor_and_cap(rng):
    M = low_rank(rng, 10, 10, 2)
    assert svd_truncate(M, eps=1e-10, r_min=5)[3] == 5
    assert svd_truncate(rng.standard_normal((10, 10)), eps=0.0, r_max=4)[3] == 4


def test_svd_truncate_rejects_bad_input(rng):
    with pytest.raises(ValueError):
        svd_truncate(rng.standard_normal((3, 3)), eps=-1.0)
    with pytest.raises(ValueError):
        svd_truncate(rng.standard_normal((3, 3)), r_min=3, r_max=2)
    M = rng.standard_normal((3, 3))
    M[0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        svd_truncate(M)


def test_qdeim_selects_invertible_rows(rng):
    U, _ = np.linalg.qr(rng.standard_normal((40, 6)))
    idx = qdeim(U)
    assert len(set(idx.tolist())) == 6
    # error bound constant of q-DEIM stays moderate for a random basis
    assert np.linalg.norm(np.linalg.inv(U[idx])) < 40.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_qdeim_is_close_to_the_best_subset(seed):
    n, k = 9, 3
    U, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, k)))

    def smallest(rows):
        return np.linalg.svd(U[list(rows)], compute_uv=False)[-1]

    def volume(rows):
        return abs(np.linalg.det(U[list(rows)]))

    best = max(smallest(rows) for rows in itertools.combinations(range(n), k))
    idx = qdeim(U)
    # ||inv(U[I])|| <= sqrt(n - k + 1) * sqrt(4^k + 6k - 1) / 3
    bound = np.sqrt(n - k + 1) * np.sqrt(4 ** k + 6 * k - 1) / 3.0
    assert smallest(idx) * bound >= 1.0
    assert smallest(idx) >= best / bound
    # maxvol starts from the same pivots and only swaps to larger volume
    assert volume(maxvol(U)[0]) >= volume(idx) * (1.0 - 1e-12)


def test_qdeim_rank_deficient_raises():
    U = np.zeros((5, 2))
    U[0, 0] = 1.0
    with pytest.raises(DegenerateSelectionError):
        qdeim(U)


def test_maxvol_dominance(rng):
    A = rng.standard_normal((50, 5))
    idx, converged = maxvol(A, delta=0.01)
    assert converged
    B = A @ np.linalg.inv(A[idx])
    assert np.abs(B).max() <= 1.01 + 1e-10
    np.testing.assert_allclose(B[idx], np.eye(5), atol=1e-10)


def test_maxvol_needs_tall_matrix(rng):
    with pytest.raises(ValueError):
        maxvol(rng.standard_normal((3, 5)))


@pytest.mark.parametrize("selector", ["qdeim", "maxvol"])
def test_cur_reconstructs_low_rank(rng, selector):
    M = low_rank(rng, 20, 15, 4)
    f = cur(M, eps=1e-12, selector=selector)
    assert f.rank == 4
    np.testing.assert_allclose(f.interp @ f.rows, M, atol=1e-8 * np.abs(M).max())
    np.testing.assert_allclose(f.interp[f.row_idx], np.eye(4), atol=1e-10)
    assert not f.oversampled


def test_cur_oversampled_rows(rng):
    M = low_rank(rng, 20, 15, 3)
    base = cur(M, eps=1e-12)
    extra = [r for r in range(20) if r not in set(base.row_idx.tolist())][:2]
    f = cur(M, eps=1e-12, oversample_rows=extra)
    assert f.oversampled
    assert len(f.row_idx) == 5
    np.testing.assert_allclose(f.interp @ f.rows, M, atol=1e-8 * np.abs(M).max())


def test_cur_unknown_selector(rng):
    with pytest.raises(ValueError):
        cur(rng.standard_normal((4, 4)), selector="random")


def test_cgs_solves_well_conditioned_system(rng):
    A = np.eye(30) + 0.1 * rng.standard_normal((30, 30))
    x_true = rng.standard_normal(30)
    result = cgs_solve(lambda v: A @ v, A @ x_true, tol=1e-12)
    assert result.converged
    np.testing.assert_allclose(result.x, x_true, atol=1e-8)


def test_cgs_keeps_shape_and_complex(rng):
    A = np.eye(12) + 0.05j * rng.standard_normal((12, 12))
    b = (rng.standard_normal(12) + 1j * rng.standard_normal(12)).reshape(3, 4)
    result = cgs_solve(lambda v: (A @ v.reshape(-1)).reshape(3, 4), b, tol=1e-12)
    assert result.x.shape == (3, 4)
    np.testing.assert_allclose(A @ result.x.reshape(-1), b.reshape(-1), atol=1e-9)


def test_cgs_zero_rhs():
    result = cgs_solve(lambda v: v, np.zeros(5))
    assert result.converged
    np.testing.assert_array_equal(result.x, np.zeros(5))
