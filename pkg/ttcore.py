"""
Tensor-train vectors and operators.

Core layout: vector cores are (r_{k-1}, d_k, r_k), operator cores are
(r_{k-1}, d_out, d_in, r_k), with r_0 = r_L = 1. A train contracts to a
tensor whose C-order flattening over the sites is its dense vector.

Two canonical forms are supported:

- orthonormal: cores left of the center have orthonormal columns when
  matricized as (r_{k-1} d_k, r_k); cores right of it have orthonormal rows
  when matricized as (r_{k-1}, d_k r_k).
- interpolative: cores left of the center evaluate to the identity on their
  selected rows (`left_sel`), cores right of it on their selected columns
  (`right_sel`). The selections induce nested multi-index sets
  (`left_idx`, `right_idx`) and the center core holds samples of the tensor.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.linalg

import config
from matalg import cur, qdeim, svd_truncate

logger = logging.getLogger(__name__)


class Form(Enum):
    NONE = "none"
    ORTHONORMAL = "orthonormal"
    INTERPOLATIVE = "interpolative"


def _empty_list(n: int) -> list:
    return [None] * n


@dataclass
class TtVector:
    """
    Tensor train with canonical-form metadata.

    Attributes:
        cores: L arrays of shape (r_{k-1}, d_k, r_k)
        center: Site of the non-canonical core, or None
        form: Canonical form of the cores around `center`
        left_sel: left_sel[k] selects rows of core k as (r_{k-1} d_k, r_k)
        right_sel: right_sel[k] selects columns of core k as (r_{k-1}, d_k r_k)
        left_idx: left_idx[i] is an (n_i, i) array of multi-indices of sites < i
        right_idx: right_idx[i] is an (m_i, L-1-i) array of multi-indices of sites > i
        inv_cache: "left"/"right" lists of sampled environments and their inverses
        oversampled: True when some selection holds more rows than the rank
    """
    cores: List[np.ndarray]
    center: Optional[int] = None
    form: Form = Form.NONE
    left_sel: List[Optional[np.ndarray]] = field(default_factory=list)
    right_sel: List[Optional[np.ndarray]] = field(default_factory=list)
    left_idx: List[Optional[np.ndarray]] = field(default_factory=list)
    right_idx: List[Optional[np.ndarray]] = field(default_factory=list)
    inv_cache: Dict[str, list] = field(default_factory=dict)
    oversampled: bool = False

    def __post_init__(self):
        if len(self.cores) == 0:
            raise ValueError("a tensor train needs at least one core")
        self.cores = [np.asarray(c) for c in self.cores]
        for k, core in enumerate(self.cores):
            if core.ndim != 3:
                raise ValueError(f"core {k} has {core.ndim} axes, expected 3")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise ValueError(f"rank mismatch between cores {k} and {k + 1}")
        L = len(self.cores)
        for name in ("left_sel", "right_sel", "left_idx", "right_idx"):
            if len(getattr(self, name)) != L:
                setattr(self, name, _empty_list(L))

    @property
    def L(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> List[int]:
        return [c.shape[1] for c in self.cores]

    @property
    def ranks(self) -> List[int]:
        """Bond dimensions r_0..r_L."""
        return [1] + [c.shape[2] for c in self.cores]

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @property
    def dtype(self):
        return np.result_type(*self.cores)

    def copy(self) -> "TtVector":
        return TtVector(
            cores=[c.copy() for c in self.cores],
            center=self.center,
            form=self.form,
            left_sel=[None if s is None else s.copy() for s in self.left_sel],
            right_sel=[None if s is None else s.copy() for s in self.right_sel],
            left_idx=[None if s is None else s.copy() for s in self.left_idx],
            right_idx=[None if s is None else s.copy() for s in self.right_idx],
            inv_cache={k: list(v) for k, v in self.inv_cache.items()},
            oversampled=self.oversampled,
        )

    def with_cores(self, cores: List[np.ndarray]) -> "TtVector":
        """Same metadata, new cores."""
        out = self.copy()
        out.cores = [np.asarray(c) for c in cores]
        return out

    def reset_metadata(self) -> None:
        self.center = None
        self.form = Form.NONE
        self.left_sel = _empty_list(self.L)
        self.right_sel = _empty_list(self.L)
        self.left_idx = _empty_list(self.L)
        self.right_idx = _empty_list(self.L)
        self.inv_cache = {}
        self.oversampled = False

    def dense(self) -> np.ndarray:
        """Full contraction, flattened in C order over the sites."""
        out = self.cores[0].reshape(-1, self.cores[0].shape[2])
        for core in self.cores[1:]:
            out = out @ core.reshape(core.shape[0], -1)
            out = out.reshape(-1, core.shape[2])
        return out.reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(max(np.real(dot(self, self)), 0.0)))

    def __repr__(self) -> str:
        return f"TtVector(L={self.L}, ranks={self.ranks}, form={self.form.value}, center={self.center})"


@dataclass
class TtOperator:
    """Tensor train with paired output/input indices per core."""
    cores: List[np.ndarray]

    def __post_init__(self):
        self.cores = [np.asarray(c) for c in self.cores]
        for k, core in enumerate(self.cores):
            if core.ndim != 4:
                raise ValueError(f"operator core {k} has {core.ndim} axes, expected 4")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[3] != 1:
            raise ValueError("boundary ranks must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[3] != self.cores[k + 1].shape[0]:
                raise ValueError(f"rank mismatch between operator cores {k} and {k + 1}")

    @property
    def L(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> List[int]:
        return [1] + [c.shape[3] for c in self.cores]

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @property
    def dims_out(self) -> List[int]:
        return [c.shape[1] for c in self.cores]

    @property
    def dims_in(self) -> List[int]:
        return [c.shape[2] for c in self.cores]

    @property
    def dtype(self):
        return np.result_type(*self.cores)

    def dense(self) -> np.ndarray:
        """Matrix of shape (prod d_out, prod d_in) in tensor order."""
        out = self.cores[0].reshape(self.cores[0].shape[1], self.cores[0].shape[2], -1)
        for core in self.cores[1:]:
            r0, do, di, r1 = core.shape
            out = np.einsum("abr,rcds->acbds", out, core)
            out = out.reshape(out.shape[0] * do, out.shape[2] * di, r1)
        return out[:, :, 0]

    def __repr__(self) -> str:
        return f"TtOperator(L={self.L}, ranks={self.ranks})"


# ============================================
# CONSTRUCTION
# ============================================

def from_dense(
    v: np.ndarray,
    dims: Sequence[int],
    eps: float = 0.0,
    r_max: Optional[int] = None,
) -> TtVector:
    """TT-SVD of a dense vector given in tensor order."""
    v = np.asarray(v).reshape(-1)
    if v.size != int(np.prod(dims)):
        raise ValueError(f"vector of length {v.size} does not match dims {list(dims)}")
    L = len(dims)
    eps_cut = eps / np.sqrt(max(L - 1, 1))
    cores = []
    r = 1
    M = v.reshape(1, -1)
    for k in range(L - 1):
        M = M.reshape(r * dims[k], -1)
        U, S, Vh, rank = svd_truncate(M, eps=eps_cut, r_max=r_max)
        cores.append(U.reshape(r, dims[k], rank))
        M = S[:, None] * Vh
        r = rank
    cores.append(M.reshape(r, dims[-1], 1))
    return TtVector(cores)


def rank_one(vectors: Sequence[np.ndarray]) -> TtVector:
    """Product state from one vector per site."""
    return TtVector([np.asarray(v).reshape(1, -1, 1) for v in vectors])


def random_tt(
    dims: Sequence[int],
    ranks: Union[int, Sequence[int]],
    rng: np.random.Generator,
    complex_values: bool = False,
) -> TtVector:
    """Gaussian random cores; `ranks` is a scalar or the L-1 inner bonds."""
    L = len(dims)
    if np.isscalar(ranks):
        inner = [int(ranks)] * (L - 1)
    else:
        inner = list(ranks)
    bonds = [1] + inner + [1]
    cores = []
    for k in range(L):
        shape = (bonds[k], dims[k], bonds[k + 1])
        core = rng.standard_normal(shape)
        if complex_values:
            core = core + 1j * rng.standard_normal(shape)
        cores.append(core)
    return TtVector(cores)


def random_op(
    dims: Sequence[int],
    ranks: Union[int, Sequence[int]],
    rng: np.random.Generator,
) -> TtOperator:
    L = len(dims)
    inner = [int(ranks)] * (L - 1) if np.isscalar(ranks) else list(ranks)
    bonds = [1] + inner + [1]
    return TtOperator([
        rng.standard_normal((bonds[k], dims[k], dims[k], bonds[k + 1])) for k in range(L)
    ])


def identity_op(dims: Sequence[int]) -> TtOperator:
    return TtOperator([np.eye(d).reshape(1, d, d, 1) for d in dims])


# ============================================
# NESTED INDICES AND SELECTIONS
# ============================================

def extend_left_indices(parent: np.ndarray, sel: np.ndarray, d: int) -> np.ndarray:
    """Multi-indices of the next bond from row selections (alpha*d + sigma)."""
    alpha, sigma = np.divmod(np.asarray(sel), d)
    return np.hstack([parent[alpha], sigma[:, None]]).astype(np.int64)


def extend_right_indices(child: np.ndarray, sel: np.ndarray, r_next: int) -> np.ndarray:
    """Multi-indices of the previous bond from column selections (sigma*r + beta)."""
    sigma, beta = np.divmod(np.asarray(sel), r_next)
    return np.hstack([sigma[:, None], child[beta]]).astype(np.int64)


def left_selection_core(sel: np.ndarray, r_prev: int, d: int) -> np.ndarray:
    """0/1 core of shape (r_prev, d, len(sel)) picking rows `sel`."""
    core = np.zeros((r_prev * d, len(sel)))
    core[np.asarray(sel), np.arange(len(sel))] = 1.0
    return core.reshape(r_prev, d, len(sel))


def right_selection_core(sel: np.ndarray, d: int, r_next: int) -> np.ndarray:
    """0/1 core of shape (len(sel), d, r_next) picking columns `sel`."""
    core = np.zeros((len(sel), d * r_next))
    core[np.arange(len(sel)), np.asarray(sel)] = 1.0
    return core.reshape(len(sel), d, r_next)


def _left_sel_to_right(sel: np.ndarray, d: int, r_prev: int) -> np.ndarray:
    # row alpha*d + sigma of (r_prev d, r) becomes column sigma*r_prev + alpha of the reversed core
    alpha, sigma = np.divmod(np.asarray(sel), d)
    return sigma * r_prev + alpha


def _right_sel_to_left(sel: np.ndarray, d: int, r_next: int) -> np.ndarray:
    sigma, beta = np.divmod(np.asarray(sel), r_next)
    return beta * d + sigma


def reversed_tt(x: TtVector) -> TtVector:
    """The same tensor with the site order reversed, metadata included."""
    L = x.L
    cores = [np.transpose(c, (2, 1, 0)) for c in x.cores[::-1]]
    out = TtVector(cores)
    out.form = x.form
    out.center = None if x.center is None else L - 1 - x.center
    out.oversampled = x.oversampled
    for k in range(L):
        src = L - 1 - k
        r_prev, d, r_next = x.cores[src].shape
        if x.right_sel[src] is not None:
            out.left_sel[k] = _right_sel_to_left(x.right_sel[src], d, r_next)
        if x.left_sel[src] is not None:
            out.right_sel[k] = _left_sel_to_right(x.left_sel[src], d, r_prev)
        if x.right_idx[src] is not None:
            out.left_idx[k] = x.right_idx[src][:, ::-1].copy()
        if x.left_idx[src] is not None:
            out.right_idx[k] = x.left_idx[src][:, ::-1].copy()
    if x.inv_cache:
        out.inv_cache = {
            "left": list(x.inv_cache.get("right", []))[::-1],
            "right": list(x.inv_cache.get("left", []))[::-1],
        }
    return out


def reversed_op(A: TtOperator) -> TtOperator:
    return TtOperator([np.transpose(c, (3, 1, 2, 0)) for c in A.cores[::-1]])


# ============================================
# CANONICALIZATION
# ============================================

def _left_orth_step(cores: List[np.ndarray], k: int, eps: float, r_max: Optional[int]) -> None:
    r0, d, r1 = cores[k].shape
    m = cores[k].reshape(r0 * d, r1)
    if eps > 0 or r_max is not None:
        U, S, Vh, rank = svd_truncate(m, eps=eps, r_max=r_max)
        Q, R = U, S[:, None] * Vh
    else:
        Q, R = scipy.linalg.qr(m, mode="economic")
    cores[k] = Q.reshape(r0, d, -1)
    cores[k + 1] = np.tensordot(R, cores[k + 1], axes=(1, 0))


def _right_orth_step(cores: List[np.ndarray], k: int, eps: float, r_max: Optional[int]) -> None:
    r0, d, r1 = cores[k].shape
    m = cores[k].reshape(r0, d * r1)
    if eps > 0 or r_max is not None:
        U, S, Vh, rank = svd_truncate(m, eps=eps, r_max=r_max)
        cores[k] = Vh.reshape(-1, d, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], U * S[None, :], axes=(2, 0))
    else:
        Q, R = scipy.linalg.qr(m.conj().T, mode="economic")
        cores[k] = Q.conj().T.reshape(-1, d, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], R.conj().T, axes=(2, 0))


def _select_orthonormal_indices(x: TtVector, center: int) -> None:
    """Nested selections on an orthonormal train; fills inv_cache with sampled environments."""
    L = x.L
    left_env = [None] * L
    right_env = [None] * L
    left_env[0] = np.ones((1, 1), dtype=x.dtype)
    x.left_idx[0] = np.zeros((1, 0), dtype=np.int64)
    for k in range(center):
        r0, d, r1 = x.cores[k].shape
        sampled = np.einsum("ab,bsc->asc", left_env[k], x.cores[k]).reshape(-1, r1)
        sel = qdeim(sampled)
        x.left_sel[k] = sel
        x.left_idx[k + 1] = extend_left_indices(x.left_idx[k], sel, d)
        left_env[k + 1] = sampled[sel]
    right_env[L - 1] = np.ones((1, 1), dtype=x.dtype)
    x.right_idx[L - 1] = np.zeros((1, 0), dtype=np.int64)
    for k in range(L - 1, center, -1):
        r0, d, r1 = x.cores[k].shape
        n_next = right_env[k].shape[0]
        sampled = np.einsum("bsc,xc->bsx", x.cores[k], right_env[k]).reshape(r0, -1)
        sel = qdeim(sampled.T)
        x.right_sel[k] = sel
        x.right_idx[k - 1] = extend_right_indices(x.right_idx[k], sel, n_next)
        right_env[k - 1] = sampled[:, sel].T
    x.inv_cache = {
        "left": [None if e is None else (e, np.linalg.inv(e)) for e in left_env],
        "right": [None if e is None else (e, np.linalg.inv(e)) for e in right_env],
    }


def _interp_left_step(x: TtVector, k: int, eps: float, r_max: Optional[int], selector: str) -> None:
    r0, d, r1 = x.cores[k].shape
    m = x.cores[k].reshape(r0 * d, r1)
    floor = r1 if eps == 0 and r_max is None else 1
    f = cur(m, eps=eps, r_max=r_max, r_min=floor, selector=selector)
    x.cores[k] = f.interp.reshape(r0, d, -1)
    x.cores[k + 1] = np.tensordot(f.rows, x.cores[k + 1], axes=(1, 0))
    x.left_sel[k] = f.row_idx
    x.left_idx[k + 1] = extend_left_indices(x.left_idx[k], f.row_idx, d)
    x.oversampled = x.oversampled or f.oversampled


def _interp_right_step(x: TtVector, k: int, eps: float, r_max: Optional[int], selector: str) -> None:
    r0, d, r1 = x.cores[k].shape
    m = x.cores[k].reshape(r0, d * r1)
    floor = r0 if eps == 0 and r_max is None else 1
    f = cur(m.T, eps=eps, r_max=r_max, r_min=floor, selector=selector)
    x.cores[k] = f.interp.T.reshape(-1, d, r1)
    x.cores[k - 1] = np.tensordot(x.cores[k - 1], f.rows.T, axes=(2, 0))
    x.right_sel[k] = f.row_idx
    x.right_idx[k - 1] = extend_right_indices(x.right_idx[k], f.row_idx, r1)
    x.oversampled = x.oversampled or f.oversampled


def canonicalize(
    tt: TtVector,
    center: int,
    form: Form,
    eps_internal: float = 0.0,
    r_max: Optional[int] = None,
    with_indices: bool = False,
    selector: str = "qdeim",
) -> TtVector:
    """
    Bring a train into canonical form around `center`.

    Args:
        tt: Input train (not modified)
        center: Site of the orthogonality / interpolation center
        form: Form.ORTHONORMAL or Form.INTERPOLATIVE
        eps_internal: Truncation tolerance applied at every factorization
        r_max: Rank cap applied at every factorization
        with_indices: For orthonormal form, also select nested indices and
            store the sampled environments and their inverses in inv_cache
        selector: Row selection used by interpolative steps ("qdeim" or "maxvol")

    Returns:
        A new canonical TtVector
    """
    if not 0 <= center < tt.L:
        raise ValueError(f"center {center} outside [0, {tt.L})")
    x = tt.copy()
    x.reset_metadata()
    L = x.L

    if form is Form.ORTHONORMAL:
        for k in range(center):
            _left_orth_step(x.cores, k, eps_internal, r_max)
        for k in range(L - 1, center, -1):
            _right_orth_step(x.cores, k, eps_internal, r_max)
        if with_indices:
            _select_orthonormal_indices(x, center)
    elif form is Form.INTERPOLATIVE:
        x.left_idx[0] = np.zeros((1, 0), dtype=np.int64)
        x.right_idx[L - 1] = np.zeros((1, 0), dtype=np.int64)
        for k in range(center):
            _interp_left_step(x, k, eps_internal, r_max, selector)
        for k in range(L - 1, center, -1):
            _interp_right_step(x, k, eps_internal, r_max, selector)
    else:
        raise ValueError(f"cannot canonicalize into form {form}")

    x.center = center
    x.form = form
    return x


@dataclass
class CanonicalReport:
    """Residuals of the canonical-form conditions of a train."""
    ok: bool
    max_residual: float
    nested: bool
    residuals: List[float]


def _is_nested_left(x: TtVector, i: int) -> bool:
    parents = {tuple(row) for row in x.left_idx[i - 1]}
    return all(tuple(row[:-1]) in parents for row in x.left_idx[i])


def _is_nested_right(x: TtVector, i: int) -> bool:
    children = {tuple(row) for row in x.right_idx[i + 1]}
    return all(tuple(row[1:]) in children for row in x.right_idx[i])


def verify_canonical(x: TtVector, tol: Optional[float] = None) -> CanonicalReport:
    """
    Check the canonical-form conditions of a train.

    Orthonormal cores are checked against Q^H Q = I (left) and Q Q^H = I
    (right). Interpolative cores are checked against U[I, :] = I; when the
    train is oversampled the selected block only has to be a projector.
    """
    if x.center is None or x.form is Form.NONE:
        raise ValueError("train carries no canonical form")
    if tol is None:
        tol = config.ORTHONORMAL_TOL if x.form is Form.ORTHONORMAL else config.CANONICAL_TOL
    residuals = []
    nested = True
    for k in range(x.L):
        if k == x.center:
            continue
        r0, d, r1 = x.cores[k].shape
        if x.form is Form.ORTHONORMAL:
            if k < x.center:
                m = x.cores[k].reshape(r0 * d, r1)
                gram = m.conj().T @ m
            else:
                m = x.cores[k].reshape(r0, d * r1)
                gram = m @ m.conj().T
            residuals.append(float(np.abs(gram - np.eye(gram.shape[0])).max()))
            continue
        if k < x.center:
            if x.left_sel[k] is None:
                raise ValueError(f"site {k} has no row selection")
            block = x.cores[k].reshape(r0 * d, r1)[x.left_sel[k], :]
        else:
            if x.right_sel[k] is None:
                raise ValueError(f"site {k} has no column selection")
            block = x.cores[k].reshape(r0, d * r1)[:, x.right_sel[k]]
        if x.oversampled:
            residuals.append(float(np.abs(block @ block - block).max()))
        else:
            residuals.append(float(np.abs(block - np.eye(block.shape[0])).max()))

    if x.form is Form.INTERPOLATIVE or any(s is not None for s in x.left_sel):
        for i in range(1, x.center + 1):
            if x.left_idx[i] is not None and not _is_nested_left(x, i):
                nested = False
        for i in range(x.center, x.L - 1):
            if x.right_idx[i] is not None and not _is_nested_right(x, i):
                nested = False

    worst = max(residuals) if residuals else 0.0
    return CanonicalReport(ok=(worst <= tol and nested), max_residual=worst,
                           nested=nested, residuals=residuals)


# ============================================
# TRUNCATION
# ============================================

def truncate(
    tt: TtVector,
    eps: float = 0.0,
    r_max: Optional[int] = None,
    r_min: int = 1,
    method: str = "svd",
) -> TtVector:
    """
    Sequential SVD truncation, right to left, ending with center 0.

    Every cut discards at most eps of the current center norm, so the
    relative error of the whole train is bounded by eps*sqrt(L-1). Ranks
    below r_min are padded, first with discarded singular vectors and then
    with an orthonormal complement, as far as the unfolding allows.

    Args:
        tt: Train to truncate
        eps: Relative tolerance per cut
        r_max: Rank cap
        r_min: Rank floor
        method: "svd", or "cur" for an interpolative right-to-left sweep

    Returns:
        Orthonormal (or interpolative for method="cur") train with center 0
    """
    if method == "cur":
        return canonicalize(tt, 0, Form.INTERPOLATIVE, eps_internal=eps, r_max=r_max)
    if method != "svd":
        raise ValueError(f"unknown truncation method {method!r}")

    x = canonicalize(tt, tt.L - 1, Form.ORTHONORMAL)
    dims = x.dims
    cores = x.cores
    for k in range(x.L - 1, 0, -1):
        r0, d, r1 = cores[k].shape
        m = cores[k].reshape(r0, d * r1)
        floor = r_min if r_max is None else min(r_min, r_max)
        U, S, Vh, rank = svd_truncate(m, eps=eps, r_max=r_max, r_min=floor)
        US = U * S[None, :]
        target = min(floor, d * r1, int(np.prod(dims[:k])))
        if rank < target:
            complement = scipy.linalg.null_space(Vh)[:, : target - rank]
            Vh = np.vstack([Vh, complement.conj().T])
            US = np.hstack([US, np.zeros((r0, complement.shape[1]), dtype=US.dtype)])
        cores[k] = Vh.reshape(-1, d, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], US, axes=(2, 0))
    x.reset_metadata()
    x.center = 0
    x.form = Form.ORTHONORMAL
    return x


# ============================================
# ALGEBRA
# ============================================

def _check_dims(dims_a: Sequence[int], dims_b: Sequence[int]) -> None:
    if list(dims_a) != list(dims_b):
        raise ValueError(f"dimension mismatch: {list(dims_a)} vs {list(dims_b)}")


def apply_op(
    A: TtOperator,
    x: TtVector,
    eps: float = 0.0,
    r_max: Optional[int] = None,
    method: str = "exact",
) -> TtVector:
    """
    Operator-vector product A x.

    method="exact" multiplies the ranks and then truncates (when eps > 0 or
    r_max is set); method="zipup" truncates on the fly while sweeping left
    to right and rounds once more at the end.
    """
    _check_dims(A.dims_in, x.dims)
    if method == "exact":
        cores = []
        for W, X in zip(A.cores, x.cores):
            p, so, si, q = W.shape
            a, _, b = X.shape
            cores.append(np.einsum("pstq,atb->pasqb", W, X).reshape(p * a, so, q * b))
        y = TtVector(cores)
    elif method == "zipup":
        cores = []
        carry = np.ones((1, 1, 1), dtype=np.result_type(A.dtype, x.dtype))
        for k, (W, X) in enumerate(zip(A.cores, x.cores)):
            T = np.einsum("rpa,pstq,atb->rsqb", carry, W, X)
            r, s, q, b = T.shape
            if k == A.L - 1:
                cores.append(T.reshape(r, s, q * b))
                break
            U, S, Vh, rank = svd_truncate(T.reshape(r * s, q * b), eps=eps, r_max=r_max)
            cores.append(U.reshape(r, s, rank))
            carry = (S[:, None] * Vh).reshape(rank, q, b)
        y = TtVector(cores)
    else:
        raise ValueError(f"unknown application method {method!r}")
    if eps > 0 or r_max is not None:
        y = truncate(y, eps=eps, r_max=r_max)
    return y


def add(x: TtVector, y: TtVector) -> TtVector:
    """Direct-sum addition; ranks add."""
    _check_dims(x.dims, y.dims)
    if x.L == 1:
        return TtVector([x.cores[0] + y.cores[0]])
    dtype = np.result_type(x.dtype, y.dtype)
    cores = []
    for k, (a, b) in enumerate(zip(x.cores, y.cores)):
        ra0, d, ra1 = a.shape
        rb0, _, rb1 = b.shape
        if k == 0:
            cores.append(np.concatenate([a, b], axis=2).astype(dtype))
        elif k == x.L - 1:
            cores.append(np.concatenate([a, b], axis=0).astype(dtype))
        else:
            core = np.zeros((ra0 + rb0, d, ra1 + rb1), dtype=dtype)
            core[:ra0, :, :ra1] = a
            core[ra0:, :, ra1:] = b
            cores.append(core)
    return TtVector(cores)


def scale(x: TtVector, c: complex) -> TtVector:
    """c * x, applied to the center core (or the first core)."""
    out = x.copy()
    site = 0 if x.center is None else x.center
    out.cores[site] = out.cores[site] * c
    return out


def dot(x: TtVector, y: TtVector) -> complex:
    """Inner product sum conj(x) * y."""
    _check_dims(x.dims, y.dims)
    env = np.ones((1, 1))
    for a, b in zip(x.cores, y.cores):
        env = np.einsum("ab,asc,bsd->cd", env, a.conj(), b)
    value = env[0, 0]
    return value.item() if np.iscomplexobj(value) else float(value)


def sample(x: TtVector, multi_index: Sequence[int]) -> complex:
    """Single element of the contracted tensor."""
    if len(multi_index) != x.L:
        raise ValueError(f"multi-index of length {len(multi_index)} for a train of {x.L} sites")
    row = np.ones((1,))
    for core, s in zip(x.cores, multi_index):
        row = row @ core[:, s, :]
    return row[0]


def sample_many(x: TtVector, multi_indices: np.ndarray) -> np.ndarray:
    """Elements at each row of an (n, L) index array."""
    multi_indices = np.asarray(multi_indices)
    rows = np.ones((multi_indices.shape[0], 1), dtype=x.dtype)
    for k, core in enumerate(x.cores):
        rows = np.einsum("na,nab->nb", rows, core[:, multi_indices[:, k], :].transpose(1, 0, 2))
    return rows[:, 0]


# ============================================
# OPERATOR ALGEBRA
# ============================================

def add_ops(A: TtOperator, B: TtOperator) -> TtOperator:
    """A + B as a direct sum of operator cores."""
    _check_dims(A.dims_in, B.dims_in)
    _check_dims(A.dims_out, B.dims_out)
    if A.L == 1:
        return TtOperator([A.cores[0] + B.cores[0]])
    dtype = np.result_type(A.dtype, B.dtype)
    cores = []
    for k, (a, b) in enumerate(zip(A.cores, B.cores)):
        ra0, do, di, ra1 = a.shape
        rb0, _, _, rb1 = b.shape
        if k == 0:
            cores.append(np.concatenate([a, b], axis=3).astype(dtype))
        elif k == A.L - 1:
            cores.append(np.concatenate([a, b], axis=0).astype(dtype))
        else:
            core = np.zeros((ra0 + rb0, do, di, ra1 + rb1), dtype=dtype)
            core[:ra0, :, :, :ra1] = a
            core[ra0:, :, :, ra1:] = b
            cores.append(core)
    return TtOperator(cores)


def scale_op(A: TtOperator, c: complex) -> TtOperator:
    cores = list(A.cores)
    cores[0] = cores[0] * c
    return TtOperator(cores)


def compose(A: TtOperator, B: TtOperator, eps: float = 0.0, r_max: Optional[int] = None) -> TtOperator:
    """Operator product A @ B."""
    _check_dims(A.dims_in, B.dims_out)
    cores = []
    for Wa, Wb in zip(A.cores, B.cores):
        p, so, _, q = Wa.shape
        a, _, si, b = Wb.shape
        cores.append(np.einsum("pstq,atub->pasuqb", Wa, Wb).reshape(p * a, so, si, q * b))
    out = TtOperator(cores)
    if eps > 0 or r_max is not None:
        out = truncate_op(out, eps=eps, r_max=r_max)
    return out


def kron_op(A: TtOperator, B: TtOperator) -> TtOperator:
    """A (first sites) times B (last sites), i.e. the serial Kronecker product."""
    return TtOperator(list(A.cores) + list(B.cores))


def truncate_op(A: TtOperator, eps: float = 0.0, r_max: Optional[int] = None) -> TtOperator:
    """Round an operator by truncating it as a vector over paired indices."""
    shapes = [c.shape for c in A.cores]
    flat = TtVector([c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3]) for c in A.cores])
    flat = truncate(flat, eps=eps, r_max=r_max)
    return TtOperator([
        c.reshape(c.shape[0], s[1], s[2], c.shape[2]) for c, s in zip(flat.cores, shapes)
    ])


def op_as_vector(A: TtOperator) -> TtVector:
    return TtVector([c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3]) for c in A.cores])


# ============================================
# PLAIN-TEXT DUMP
# ============================================

def _format_value(v, is_complex: bool) -> str:
    return repr(complex(v)) if is_complex else repr(float(v))


def dump_tt(x: TtVector) -> str:
    """
    One line per core: "r0 d r1 | v v v ..." with row-major values.

    The header line records the number of sites and the dtype.
    """
    is_complex = np.iscomplexobj(x.cores[0]) or any(np.iscomplexobj(c) for c in x.cores)
    lines = [f"# tt L={x.L} dtype={'complex128' if is_complex else 'float64'}"]
    for core in x.cores:
        shape = " ".join(str(n) for n in core.shape)
        values = " ".join(_format_value(v, is_complex) for v in core.reshape(-1))
        lines.append(f"{shape} | {values}")
    return "\n".join(lines) + "\n"


def load_tt(text: str) -> TtVector:
    """Inverse of `dump_tt`."""
    cores = []
    is_complex = False
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            is_complex = "complex" in line
            continue
        shape_part, values_part = line.split("|", 1)
        shape = tuple(int(n) for n in shape_part.split())
        parse = complex if is_complex else float
        values = np.array([parse(v) for v in values_part.split()])
        cores.append(values.reshape(shape))
    return TtVector(cores)
