"""
Dense matrix kernels: truncated SVD, q-DEIM and maxvol row selection,
CUR (interpolative) factorization and a CGS linear solver.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, cgs

import config

logger = logging.getLogger(__name__)


class NonFiniteError(ArithmeticError):
    """A matrix handed to a kernel contains NaN or inf."""


class DegenerateSelectionError(ValueError):
    """Row selection on a rank-deficient basis."""


class SolverBreakdownError(ArithmeticError):
    """CGS broke down twice in a row."""


@dataclass
class CurFactors:
    """M ~= interp @ rows, with interp[row_idx, :] = identity unless oversampled."""
    interp: np.ndarray
    rows: np.ndarray
    row_idx: np.ndarray
    col_idx: np.ndarray
    oversampled: bool = False

    @property
    def rank(self) -> int:
        return self.interp.shape[1]


@dataclass
class SolveResult:
    x: np.ndarray
    residual: float
    converged: bool
    restarted: bool = False


def svd_truncate(
    M: np.ndarray,
    eps: float = 0.0,
    r_max: Optional[int] = None,
    r_min: int = 1,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """
    Truncated SVD with a Frobenius-relative tail criterion.

    Args:
        M: Matrix to factor
        eps: Relative tolerance on the discarded singular-value mass
        r_max: Rank cap (None for no cap)
        r_min: Rank floor, limited by the full rank min(M.shape)

    Returns:
        (U, S, Vh, rank) with M ~= U @ diag(S) @ Vh
    """
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    if r_max is not None and r_min > r_max:
        raise ValueError(f"r_min={r_min} exceeds r_max={r_max}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteError(f"non-finite entries in {M.shape} matrix")

    try:
        U, S, Vh = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        U, S, Vh = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")

    full = S.size
    # tail[r] = sum_{k >= r} S_k^2
    tail = np.concatenate([np.cumsum((S ** 2)[::-1])[::-1], [0.0]])
    threshold = (eps ** 2) * tail[0]
    rank = int(np.argmax(tail <= threshold))
    rank = max(rank, min(r_min, full))
    if r_max is not None:
        rank = min(rank, r_max)
    rank = max(min(rank, full), min(1, full))
    return U[:, :rank], S[:rank], Vh[:rank, :], rank


def qdeim(U: np.ndarray, n_select: Optional[int] = None, tol: float = 1e-13) -> np.ndarray:
    """
    q-DEIM row selection: pivots of a column-pivoted QR of U^H.

    Args:
        U: Matrix with (near) orthonormal columns
        n_select: Number of rows to pick, defaults to the number of columns
        tol: Relative threshold on the pivots below which U counts as rank deficient

    Returns:
        Array of selected row indices
    """
    n_rows, n_cols = U.shape
    if n_select is None:
        n_select = n_cols
    if n_select > n_cols or n_select > n_rows:
        raise ValueError(f"cannot select {n_select} rows from a {U.shape} basis")
    _, R, piv = scipy.linalg.qr(U.conj().T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if n_select > 0 and (diag[0] == 0 or diag[n_select - 1] <= tol * diag[0]):
        raise DegenerateSelectionError(
            f"basis of shape {U.shape} has numerical rank below {n_select}"
        )
    return np.asarray(piv[:n_select])


def maxvol(
    A: np.ndarray,
    delta: float = config.MAXVOL_DELTA,
    max_iter: int = config.MAXVOL_MAX_ITER,
) -> Tuple[np.ndarray, bool]:
    """
    Rows of a tall matrix spanning a dominant (quasi maximal volume) submatrix.

    Starts from the pivots of a column-pivoted QR and swaps rows until every
    entry of A @ inv(A[I]) is at most 1 + delta in magnitude.

    Returns:
        (row indices, converged flag)
    """
    n_rows, n_cols = A.shape
    if n_cols > n_rows:
        raise ValueError(f"maxvol needs a tall matrix, got {A.shape}")
    _, _, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    idx = np.array(piv[:n_cols])

    try:
        B = scipy.linalg.solve(A[idx].T, A.T).T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise DegenerateSelectionError(f"pivoted-QR start is singular: {e}") from e

    for _ in range(max_iter):
        i, j = np.unravel_index(np.argmax(np.abs(B)), B.shape)
        if np.abs(B[i, j]) <= 1.0 + delta:
            return idx, True
        idx[j] = i
        row = B[i, :].copy()
        row[j] -= 1.0
        B -= np.outer(B[:, j], row) / B[i, j]

    logger.warning("maxvol did not converge in %d iterations (max entry %.4f)",
                   max_iter, np.abs(B).max())
    return idx, False


def _union_rows(base: np.ndarray, extra: Sequence[int], cap: int) -> np.ndarray:
    rows = list(base)
    seen = set(rows)
    for r in extra:
        if len(rows) >= cap:
            break
        if r not in seen:
            rows.append(int(r))
            seen.add(int(r))
    return np.array(rows, dtype=np.int64)


def cur(
    M: np.ndarray,
    eps: float = 0.0,
    r_max: Optional[int] = None,
    r_min: int = 1,
    oversample_rows: Optional[Sequence[int]] = None,
    selector: str = "qdeim",
) -> CurFactors:
    """
    Interpolative factorization M ~= interp @ M[row_idx, :].

    The rank comes from a truncated SVD; rows and columns are selected on the
    singular vectors (q-DEIM by default, maxvol on request). The interpolating
    functions are U @ pinv(U[I, :]), which reduces to U @ inv(U[I, :]) and
    satisfies interp[I, :] = identity when no extra rows are requested.

    Args:
        M: Matrix to factor
        eps: Relative truncation tolerance
        r_max: Rank cap
        r_min: Rank floor
        oversample_rows: Extra candidate rows unioned with the selected ones
        selector: "qdeim" or "maxvol"

    Returns:
        CurFactors
    """
    U, _, Vh, rank = svd_truncate(M, eps=eps, r_max=r_max, r_min=r_min)

    if selector == "maxvol":
        row_idx, _ = maxvol(U)
        col_idx, _ = maxvol(Vh.conj().T)
    elif selector == "qdeim":
        row_idx = qdeim(U)
        col_idx = qdeim(Vh.conj().T)
    else:
        raise ValueError(f"unknown selector {selector!r}")

    oversampled = False
    if oversample_rows is not None:
        cap = min(M.shape[0], config.OVERSAMPLE_FACTOR * rank)
        row_idx = _union_rows(row_idx, oversample_rows, cap)
        oversampled = row_idx.size > rank

    sub = U[row_idx, :]
    if oversampled:
        interp = U @ np.linalg.pinv(sub)
    else:
        cond = np.linalg.cond(sub)
        if not np.isfinite(cond) or cond > 1e12:
            logger.warning("singular interpolation submatrix (cond %.2e), using pseudo-inverse", cond)
            interp = U @ np.linalg.pinv(sub)
            oversampled = True
        else:
            interp = scipy.linalg.solve(sub.T, U.T).T

    return CurFactors(
        interp=interp,
        rows=M[row_idx, :],
        row_idx=row_idx,
        col_idx=col_idx,
        oversampled=oversampled,
    )


def cgs_solve(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = config.CGS_TOL,
    max_iter: Optional[int] = config.CGS_MAX_ITER,
    x0: Optional[np.ndarray] = None,
) -> SolveResult:
    """
    Solve A x = b with conjugate gradient squared.

    A breakdown restarts the iteration once from the current iterate;
    a second breakdown raises SolverBreakdownError. Running out of
    iterations is reported through `converged=False`.
    """
    b = np.asarray(b)
    shape = b.shape
    b_flat = b.reshape(-1)
    norm_b = np.linalg.norm(b_flat)
    if norm_b == 0.0:
        return SolveResult(x=np.zeros_like(b), residual=0.0, converged=True)

    n = b_flat.size
    dtype = np.result_type(b_flat.dtype, np.float64)
    operator = LinearOperator(
        (n, n),
        matvec=lambda v: np.asarray(apply_A(v.reshape(shape))).reshape(-1),
        dtype=dtype,
    )
    x = np.zeros(n, dtype=dtype) if x0 is None else np.asarray(x0, dtype=dtype).reshape(-1)

    restarted = False
    info = 0
    for attempt in range(2):
        x, info = cgs(operator, b_flat, x0=x, rtol=tol, atol=0.0, maxiter=max_iter)
        if info >= 0:
            break
        if attempt == 0:
            logger.warning("CGS breakdown, restarting from the current iterate")
            restarted = True
        else:
            raise SolverBreakdownError("CGS broke down after a restart")

    residual = np.linalg.norm(operator.matvec(x) - b_flat) / norm_b
    converged = info == 0 or residual <= tol
    if not converged:
        logger.warning("CGS stopped at relative residual %.3e (tol %.1e)", residual, tol)
    return SolveResult(x=x.reshape(shape), residual=float(residual),
                       converged=bool(converged), restarted=restarted)
