"""
Dynamical low-rank sweeps over tensor trains.

A time step visits the sites left to right. At every site the dynamics is
projected onto the manifold spanned by the frozen cores (blocking), the
small problem for the center core is integrated (solving) and the center
moves one site on (decimation). Three projections are supported:

- G: orthogonal (Galerkin) projection on an orthonormal train.
- X: interpolation on an interpolative train; the center holds samples.
- P: oblique projection, an orthonormal train whose center is converted to
  samples at nested indices selected on the orthonormal basis.

Decimation either projects the original state onto an expanded basis (AP)
or evolves the bond matrix backwards in time (PS).
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

import config
from matalg import cur, qdeim, svd_truncate
from stepper import (
    DiagnosticsRecord,
    DynamicsModel,
    Method,
    ReducedProblem,
    SolverDivergenceError,
    integrate,
)
from ttcore import (
    Form,
    TtOperator,
    TtVector,
    add,
    canonicalize,
    extend_left_indices,
    left_selection_core,
    reversed_tt,
    right_selection_core,
    truncate,
)

logger = logging.getLogger(__name__)


class Flavor(Enum):
    G = "G"
    X = "X"
    P = "P"


class Scheme(Enum):
    PS = "PS"
    AP = "AP"


class Direction(Enum):
    LEFT_TO_RIGHT = "ltr"
    RIGHT_TO_LEFT = "rtl"


class StateError(RuntimeError):
    """A train lacks the selections or invertible blocks a projection needs."""


@dataclass
class SweepPlan:
    """Configuration of one dynamical low-rank time step."""
    flavor: Flavor = Flavor.X
    scheme: Scheme = Scheme.AP
    stepper: Method = Method.EULER
    eps: float = config.DEFAULT_EPS
    eps_in: float = config.DEFAULT_EPS_IN
    r_max: Optional[int] = config.DEFAULT_R_MAX
    r_min: int = config.DEFAULT_R_MIN
    two_site: bool = False
    oversample: bool = False
    direction: Direction = Direction.LEFT_TO_RIGHT
    symmetric: bool = True
    rk4_targets: str = "stages"
    p_blocking: str = "sampled"
    cn_tol: float = config.CGS_TOL
    selector: str = "qdeim"

    def __post_init__(self):
        if self.two_site and self.scheme is not Scheme.PS:
            raise ValueError("the two-site variant only exists for projector splitting")
        if self.eps < 0 or self.eps_in < 0:
            raise ValueError("tolerances must be non-negative")
        if self.r_max is not None and self.r_min > self.r_max:
            raise ValueError(f"r_min={self.r_min} exceeds r_max={self.r_max}")
        if self.rk4_targets not in ("stages", "thirds"):
            raise ValueError(f"unknown RK4 targeting {self.rk4_targets!r}")
        if self.p_blocking not in ("sampled", "oblique"):
            raise ValueError(f"unknown oblique blocking {self.p_blocking!r}")
        if self.eps_in > self.eps:
            logger.warning("eps_in=%.1e is larger than eps=%.1e", self.eps_in, self.eps)


# ============================================
# ENVIRONMENTS
# ============================================

def _identity_cores(ket: Sequence[np.ndarray]) -> List[np.ndarray]:
    return [np.eye(c.shape[1]).reshape(1, c.shape[1], c.shape[1], 1) for c in ket]


@dataclass
class EnvironmentPair:
    """
    Contractions of <bra| op |ket> to the left and to the right of a site.

    left[k] contracts cores 0..k-1 and right[k] contracts cores k+1..L-1;
    both are indexed (bra bond, operator bond, ket bond). A missing
    operator means the identity.
    """
    bra: List[np.ndarray]
    ket: List[np.ndarray]
    op: List[np.ndarray]
    left: List[Optional[np.ndarray]] = field(default_factory=list)
    right: List[Optional[np.ndarray]] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        bra: Sequence[np.ndarray],
        ket: Sequence[np.ndarray],
        op: Optional[Sequence[np.ndarray]] = None,
        site: int = 0,
    ) -> "EnvironmentPair":
        L = len(ket)
        env = cls(
            bra=list(bra),
            ket=list(ket),
            op=list(op) if op is not None else _identity_cores(ket),
            left=[None] * L,
            right=[None] * L,
        )
        env.left[0] = np.ones((1, 1, 1))
        env.right[L - 1] = np.ones((1, 1, 1))
        for k in range(site):
            env.advance(k)
        for k in range(L - 1, site, -1):
            env.right[k - 1] = np.einsum(
                "asx,pstq,bty,xqy->apb", env.bra[k], env.op[k], env.ket[k], env.right[k], optimize=True
            )
        return env

    def advance(self, k: int, bra_core: Optional[np.ndarray] = None, ket_core: Optional[np.ndarray] = None) -> None:
        """Replace the cores of site k and extend the left contraction past it."""
        if bra_core is not None:
            self.bra[k] = bra_core
        if ket_core is not None:
            self.ket[k] = ket_core
        self.left[k + 1] = np.einsum(
            "apb,asx,pstq,bty->xqy", self.left[k], self.bra[k], self.op[k], self.ket[k], optimize=True
        )

    def site_operator(self, i: int) -> np.ndarray:
        A = np.einsum("apb,pstq,xqy->asxbty", self.left[i], self.op[i], self.right[i], optimize=True)
        n_out = A.shape[0] * A.shape[1] * A.shape[2]
        return A.reshape(n_out, -1)

    def site_apply(self, i: int, core: np.ndarray) -> np.ndarray:
        return np.einsum("apb,pstq,bty,xqy->asx", self.left[i], self.op[i], core, self.right[i], optimize=True)

    def two_site_operator(self, i: int) -> np.ndarray:
        A = np.einsum("apb,pstq,quvr,xry->asuxbtvy", self.left[i], self.op[i], self.op[i + 1],
                      self.right[i + 1], optimize=True)
        n_out = int(np.prod(A.shape[:4]))
        return A.reshape(n_out, -1)

    def two_site_apply(self, i: int, core: np.ndarray) -> np.ndarray:
        return np.einsum("apb,pstq,quvr,btvy,xry->asux", self.left[i], self.op[i], self.op[i + 1],
                         core, self.right[i + 1], optimize=True)

    def bond_operator(self, i: int) -> np.ndarray:
        """Operator on the bond matrix between sites i and i+1."""
        A = np.einsum("apb,xpy->axby", self.left[i + 1], self.right[i], optimize=True)
        return A.reshape(A.shape[0] * A.shape[1], -1)

    def bond_apply(self, i: int, W: np.ndarray) -> np.ndarray:
        return np.einsum("apb,by,xpy->ax", self.left[i + 1], W, self.right[i], optimize=True)


def _selection_bra(tt: TtVector, site: int) -> List[np.ndarray]:
    """0/1 bra cores picking the selected rows left of `site` and columns right of it."""
    bra = []
    for k, core in enumerate(tt.cores):
        r0, d, r1 = core.shape
        if k < site:
            if tt.left_sel[k] is None:
                raise StateError(f"site {k} has no row selection")
            bra.append(left_selection_core(tt.left_sel[k], r0, d))
        elif k > site:
            if tt.right_sel[k] is None:
                raise StateError(f"site {k} has no column selection")
            bra.append(right_selection_core(tt.right_sel[k], d, r1))
        else:
            bra.append(np.zeros_like(core))
    return bra


def _orthonormal_bra(tt: TtVector) -> List[np.ndarray]:
    return [c.conj() for c in tt.cores]


def _require_center(tt: TtVector, site: int) -> None:
    if tt.center != site:
        raise StateError(f"train is centred at {tt.center}, not at site {site}")


def site_blocks(tt: TtVector, site: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sampled left and right environments (L_Q[I, :], R_Q[:, J]) of an orthonormal train.

    Taken from inv_cache when canonicalization stored them for this center.
    """
    cache = tt.inv_cache
    if cache and tt.center == site and cache.get("left") and cache["left"][site] is not None:
        return cache["left"][site][0], cache["right"][site][0]
    env = EnvironmentPair.build(_selection_bra(tt, site), tt.cores, None, site)
    return env.left[site][:, 0, :], env.right[site][:, 0, :]


# ============================================
# REPRESENTATION CONVERSIONS
# ============================================

def to_interpolative(M_Q: np.ndarray, left_block: np.ndarray, right_block: np.ndarray) -> np.ndarray:
    """M_X = L_Q[I, :] M_Q R_Q[:, J], applied on the first and last index of M_Q."""
    a, c = M_Q.shape[0], M_Q.shape[-1]
    flat = M_Q.reshape(a, -1, c)
    out = np.einsum("ab,bsc,xc->asx", left_block, flat, right_block, optimize=True)
    return out.reshape((left_block.shape[0],) + M_Q.shape[1:-1] + (right_block.shape[0],))


def to_orthonormal(M_X: np.ndarray, left_block: np.ndarray, right_block: np.ndarray) -> np.ndarray:
    """Inverse of `to_interpolative`."""
    for block in (left_block, right_block):
        cond = np.linalg.cond(block)
        if not np.isfinite(cond) or cond > 1e12:
            raise StateError(f"sampled environment is singular (cond {cond:.2e})")
    a, c = M_X.shape[0], M_X.shape[-1]
    middle = M_X.shape[1:-1]
    out = scipy.linalg.solve(left_block, M_X.reshape(a, -1))
    out = scipy.linalg.solve(right_block, out.reshape(-1, c).T).T
    return out.reshape((left_block.shape[1],) + middle + (right_block.shape[1],))


def _kron_blocks(left_block: np.ndarray, d: int, right_block: np.ndarray) -> np.ndarray:
    return np.kron(np.kron(left_block, np.eye(d)), right_block)


# ============================================
# PROJECTIONS
# ============================================

def project_operator(
    A: TtOperator,
    bra: TtVector,
    ket: TtVector,
    site: int,
    flavor: Flavor,
    p_blocking: str = "sampled",
) -> np.ndarray:
    """
    Effective operator of A at `site` as a dense matrix.

    G: E_Q^H A E_Q. X: rows of A E_X at the bra's selected multi-indices.
    P: the X construction on the orthonormal ket, mapped to sample
    coordinates (p_blocking="sampled"), or T E_Q^H A E_Q T^{-1} with
    T the sampling of the orthonormal environments ("oblique").

    Args:
        A: Operator
        bra: Train defining the output manifold, centred at `site`
        ket: Train defining the input manifold, centred at `site`
        site: Center site
        flavor: Projection flavor
        p_blocking: Oblique blocking option

    Returns:
        Matrix of shape (bra center size, ket center size)
    """
    _require_center(bra, site)
    _require_center(ket, site)
    if flavor is Flavor.G:
        return EnvironmentPair.build(_orthonormal_bra(bra), ket.cores, A.cores, site).site_operator(site)
    if flavor is Flavor.X:
        return EnvironmentPair.build(_selection_bra(bra, site), ket.cores, A.cores, site).site_operator(site)

    d_in = ket.cores[site].shape[1]
    gl_in, gr_in = site_blocks(ket, site)
    t_inv = np.linalg.inv(_kron_blocks(gl_in, d_in, gr_in))
    if p_blocking == "sampled":
        env = EnvironmentPair.build(_selection_bra(bra, site), ket.cores, A.cores, site)
        return env.site_operator(site) @ t_inv
    gl_out, gr_out = site_blocks(bra, site)
    d_out = bra.cores[site].shape[1]
    env = EnvironmentPair.build(_orthonormal_bra(bra), ket.cores, A.cores, site)
    return _kron_blocks(gl_out, d_out, gr_out) @ env.site_operator(site) @ t_inv


def project_vector(b: TtVector, bra: TtVector, site: int, flavor: Flavor) -> np.ndarray:
    """
    Effective vector of b at `site`, shaped like the bra's center core.

    G returns E_Q^H b, X the samples of b at the selected multi-indices and
    P the samples of the orthogonal projection of b.
    """
    _require_center(bra, site)
    if flavor is Flavor.X:
        env = EnvironmentPair.build(_selection_bra(bra, site), b.cores, None, site)
        return env.site_apply(site, b.cores[site])
    env = EnvironmentPair.build(_orthonormal_bra(bra), b.cores, None, site)
    coefficients = env.site_apply(site, b.cores[site])
    if flavor is Flavor.G:
        return coefficients
    gl, gr = site_blocks(bra, site)
    return to_interpolative(coefficients, gl, gr)


# ============================================
# DECIMATION
# ============================================

@dataclass
class Expansion:
    """New left-canonical core spanning several candidate centers."""
    core: np.ndarray
    weights: List[np.ndarray]
    sel: Optional[np.ndarray]
    oversampled: bool = False

    @property
    def rank(self) -> int:
        return self.core.shape[2]


def _select_on_basis(U3: np.ndarray, left_block: np.ndarray) -> np.ndarray:
    sampled = np.einsum("ab,bsc->asc", left_block, U3).reshape(-1, U3.shape[2])
    return qdeim(sampled)


def _update_rows(mats: Sequence[np.ndarray], eps_in: float) -> List[int]:
    """q-DEIM rows of the differences between each candidate and the original center."""
    rows: List[int] = []
    scale = max(np.linalg.norm(m) for m in mats)
    for m in mats[1:]:
        delta = m - mats[0]
        if np.linalg.norm(delta) <= eps_in * scale:
            continue
        U_d, _, _, _ = svd_truncate(delta, eps=eps_in)
        rows.extend(int(r) for r in qdeim(U_d))
    return rows


def subspace_expand(
    candidates: Sequence[np.ndarray],
    flavor: Flavor,
    eps_in: float,
    r_max: Optional[int] = None,
    left_block: Optional[np.ndarray] = None,
    oversample: bool = False,
    selector: str = "qdeim",
) -> Expansion:
    """
    Basis for the column space of all candidate centers.

    The candidates are matricized as (r_{i-1} d, r_i) and concatenated. G
    and P take the leading left singular vectors at eps_in, with weights
    U^H C_k; P also selects rows on L_Q[I, :] U. X takes an interpolative
    factorization whose weights are the candidates' selected rows. X also
    samples the rows q-DEIM picks on the update directions (each candidate
    minus the original), up to twice the rank; with `oversample` the rows
    picked for each candidate alone are unioned in as well.

    Args:
        candidates: Center cores (state coordinates), the original state first
        flavor: Projection flavor
        eps_in: Internal truncation tolerance
        r_max: Optional cap on the expanded rank
        left_block: L_Q[I, :] at this site (P only)
        oversample: Union per-candidate row selections (X only)
        selector: Row selection used by X

    Returns:
        Expansion with one weight matrix per candidate
    """
    r0, d, _ = candidates[0].shape
    mats = [c.reshape(r0 * d, -1) for c in candidates]
    stacked = np.hstack(mats)

    if flavor is Flavor.X:
        extra = _update_rows(mats, eps_in)
        if oversample and len(mats) > 1:
            for m in mats:
                U_m, _, _, _ = svd_truncate(m, eps=eps_in)
                extra.extend(int(r) for r in qdeim(U_m))
        f = cur(stacked, eps=eps_in, r_max=r_max, oversample_rows=extra or None, selector=selector)
        return Expansion(
            core=f.interp.reshape(r0, d, -1),
            weights=[m[f.row_idx, :] for m in mats],
            sel=f.row_idx,
            oversampled=f.oversampled,
        )

    U, _, _, rank = svd_truncate(stacked, eps=eps_in, r_max=r_max)
    U3 = U.reshape(r0, d, rank)
    sel = None
    if flavor is Flavor.P:
        if left_block is None:
            raise StateError("oblique expansion needs the sampled left environment")
        sel = _select_on_basis(U3, left_block)
    return Expansion(core=U3, weights=[U.conj().T @ m for m in mats], sel=sel)


def _set_left_core(tt: TtVector, site: int, core: np.ndarray, sel: Optional[np.ndarray]) -> None:
    tt.cores[site] = core
    tt.left_sel[site] = sel
    if sel is not None and tt.left_idx[site] is not None:
        tt.left_idx[site + 1] = extend_left_indices(tt.left_idx[site], sel, core.shape[1])
    tt.center = site + 1


def decimate_ap(state: TtVector, site: int, expansion: Expansion) -> TtVector:
    """Site core <- expanded basis, next core <- (projection of the original center) @ next core."""
    if site >= state.L - 1:
        raise ValueError("the last site has no successor to absorb the weights")
    out = state.copy()
    out.cores[site + 1] = np.tensordot(expansion.weights[0], out.cores[site + 1], axes=(1, 0))
    _set_left_core(out, site, expansion.core, expansion.sel)
    out.oversampled = out.oversampled or expansion.oversampled
    return out


def _factorize(M: np.ndarray, flavor: Flavor, left_block: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Fixed-rank split M = core @ W with a left-canonical core."""
    r0, d, r1 = M.shape
    mat = M.reshape(r0 * d, r1)
    if flavor is Flavor.X:
        rank = min(mat.shape)
        f = cur(mat, eps=0.0, r_max=rank, r_min=rank)
        return f.interp.reshape(r0, d, -1), f.rows, f.row_idx
    Q, R = scipy.linalg.qr(mat, mode="economic")
    Q3 = Q.reshape(r0, d, -1)
    sel = _select_on_basis(Q3, left_block) if flavor is Flavor.P else None
    return Q3, R, sel


def decimate_ps(
    state: TtVector,
    site: int,
    M_new: np.ndarray,
    flavor: Flavor,
    evolve_bond: Callable[[TtVector, np.ndarray], np.ndarray],
    left_block: Optional[np.ndarray] = None,
) -> TtVector:
    """
    Split the updated center, evolve the bond matrix backwards and absorb it.

    Args:
        state: Train centred at `site`
        site: Current site (not the last one)
        M_new: Forward-evolved center in state coordinates
        flavor: Projection flavor
        evolve_bond: Callback (train with the new site core, W) -> W evolved by -dt
        left_block: L_Q[I, :] at this site (P only)

    Returns:
        Train centred at site + 1
    """
    if site >= state.L - 1:
        raise ValueError("the last site has no bond to evolve")
    core, W, sel = _factorize(M_new, flavor, left_block)
    out = state.copy()
    _set_left_core(out, site, core, sel)
    W_back = evolve_bond(out, W)
    out.cores[site + 1] = np.tensordot(W_back, out.cores[site + 1], axes=(1, 0))
    return out


# ============================================
# SWEEP
# ============================================

def prepare(tt: TtVector, flavor: Flavor, selector: str = "qdeim", eps_internal: float = 0.0) -> TtVector:
    """Canonical form with center 0 required by a left-to-right sweep of `flavor`."""
    if flavor is Flavor.X:
        return canonicalize(tt, 0, Form.INTERPOLATIVE, eps_internal=eps_internal, selector=selector)
    return canonicalize(tt, 0, Form.ORTHONORMAL, eps_internal=eps_internal,
                        with_indices=(flavor is Flavor.P))


def _fixed_center(tt: TtVector, kind: str, i: int) -> np.ndarray:
    """What a train that is not being evolved contributes at a site, bond or site pair."""
    if kind == "site":
        return tt.cores[i]
    if kind == "bond":
        return np.eye(tt.cores[i].shape[2])
    return np.einsum("asb,btc->astc", tt.cores[i], tt.cores[i + 1])


def _level_apply(env: EnvironmentPair, kind: str, i: int, M: np.ndarray) -> np.ndarray:
    if kind == "site":
        return env.site_apply(i, M)
    if kind == "bond":
        return env.bond_apply(i, M)
    return env.two_site_apply(i, M)


class _Sweep:
    """Environments and bookkeeping of one left-to-right sweep over all fields."""

    def __init__(self, states: List[TtVector], model: DynamicsModel, plan: SweepPlan):
        self.model = model
        self.plan = plan
        self.flavor = plan.flavor
        self.states = states
        self.L = states[0].L
        self.n_eval = 0
        flavor = plan.flavor
        oblique = flavor is Flavor.P and plan.p_blocking == "oblique"

        self.bras = {}
        for f, s in enumerate(states):
            if flavor in (Flavor.X, Flavor.P):
                self.bras[(f, "sel")] = _selection_bra(s, 0)
            if flavor in (Flavor.G, Flavor.P):
                self.bras[(f, "orth")] = _orthonormal_bra(s)

        # (env, bra field, bra kind, ket field or None)
        self.slots = []
        self.coupling_slots = []
        self.weight_slots = []
        for c in model.couplings:
            if flavor is Flavor.G or oblique:
                kind, op = "orth", c.folded_op()
            else:
                kind, op = "sel", c.op
            self.coupling_slots.append(self._slot(c.target, kind, states[c.source].cores, op, c.source))
            if c.weight is not None and kind == "sel":
                self.weight_slots.append(self._slot(c.target, "sel", c.weight.cores, None, None))
            else:
                self.weight_slots.append(None)
        self.source_slots = []
        for f, b in enumerate(model.sources):
            if b is None:
                self.source_slots.append(None)
            else:
                kind = "sel" if flavor is Flavor.X else "orth"
                self.source_slots.append(self._slot(f, kind, b.cores, None, None))
        self.block_slots = []
        if flavor is Flavor.P:
            self.block_slots = [self._slot(f, "sel", s.cores, None, f) for f, s in enumerate(states)]

    def _slot(self, bra_field, bra_kind, ket_cores, op, ket_field):
        op_cores = None if op is None else op.cores
        env = EnvironmentPair.build(self.bras[(bra_field, bra_kind)], ket_cores, op_cores, 0)
        slot = (env, bra_field, bra_kind, ket_field)
        self.slots.append(slot)
        return slot

    # ---------- bookkeeping ----------

    def advance(self, i: int) -> None:
        """Record the new left cores of site i in the bras and the environments."""
        for f, s in enumerate(self.states):
            core = s.cores[i]
            if (f, "orth") in self.bras:
                self.bras[(f, "orth")][i] = core.conj()
            if (f, "sel") in self.bras:
                self.bras[(f, "sel")][i] = left_selection_core(s.left_sel[i], core.shape[0], core.shape[1])
        for env, bra_field, bra_kind, ket_field in self.slots:
            ket = None if ket_field is None else self.states[ket_field].cores[i]
            env.advance(i, self.bras[(bra_field, bra_kind)][i], ket)

    def blocks(self, f: int, kind: str, i: int) -> Tuple[np.ndarray, np.ndarray]:
        env = self.block_slots[f][0]
        if kind == "site":
            return env.left[i][:, 0, :], env.right[i][:, 0, :]
        if kind == "bond":
            return env.left[i + 1][:, 0, :], env.right[i][:, 0, :]
        return env.left[i][:, 0, :], env.right[i + 1][:, 0, :]

    def to_reduced(self, f: int, kind: str, i: int, M: np.ndarray) -> np.ndarray:
        if self.flavor is not Flavor.P:
            return M
        gl, gr = self.blocks(f, kind, i)
        return to_interpolative(M, gl, gr)

    def to_state(self, f: int, kind: str, i: int, M: np.ndarray) -> np.ndarray:
        if self.flavor is not Flavor.P:
            return M
        gl, gr = self.blocks(f, kind, i)
        return to_orthonormal(M, gl, gr)

    # ---------- blocking ----------

    def problem(self, kind: str, i: int, shapes: List[Tuple[int, ...]]) -> ReducedProblem:
        """Reduced problem for all fields at a site, bond or site pair."""
        model = self.model
        flavor = self.flavor
        oblique = flavor is Flavor.P and self.plan.p_blocking == "oblique"
        sizes = [int(np.prod(s)) for s in shapes]
        splits = np.cumsum(sizes)[:-1]

        weights = []
        for c, slot in zip(model.couplings, self.weight_slots):
            if slot is None:
                weights.append(None)
            else:
                weights.append(_level_apply(slot[0], kind, i, _fixed_center(c.weight, kind, i)).reshape(-1))
        sources = []
        for f, (b, slot) in enumerate(zip(model.sources, self.source_slots)):
            if slot is None:
                sources.append(None)
                continue
            value = _level_apply(slot[0], kind, i, _fixed_center(b, kind, i))
            if flavor is Flavor.P:
                value = self.to_reduced(f, kind, i, value)
            sources.append(value.reshape(-1))

        def apply(y: np.ndarray, t: float) -> np.ndarray:
            self.n_eval += y.size
            fields = [part.reshape(shape) for part, shape in zip(np.split(y, splits), shapes)]
            applied = []
            for c, slot, w in zip(model.couplings, self.coupling_slots, weights):
                M = fields[c.source]
                if flavor is Flavor.P:
                    M = self.to_state(c.source, kind, i, M)
                value = _level_apply(slot[0], kind, i, M)
                if oblique:
                    value = self.to_reduced(c.target, kind, i, value)
                value = value.reshape(-1)
                if w is not None:
                    value = w * value
                applied.append(value)
            rates = model.rate([fld.reshape(-1) for fld in fields], applied, t)
            for f, b in enumerate(sources):
                if b is not None:
                    rates[f] = rates[f] + b
            return np.concatenate(rates)

        return ReducedProblem(apply=apply, is_linear=not model.nonlinear)

    def _solve(self, kind: str, i: int, centers: List[np.ndarray], t: float, dt: float):
        shapes = [c.shape for c in centers]
        rp = self.problem(kind, i, shapes)
        y0 = np.concatenate([c.reshape(-1) for c in centers])
        y1, targets = integrate(self.plan.stepper, rp, y0, t, dt,
                                rk4_targets=self.plan.rk4_targets, tol=self.plan.cn_tol)
        sizes = [int(np.prod(s)) for s in shapes]
        splits = np.cumsum(sizes)[:-1]

        def unpack(y):
            return [part.reshape(shape) for part, shape in zip(np.split(y, splits), shapes)]

        return unpack(y1), [unpack(y) for y in targets]

    def reduced_centers(self, kind: str, i: int, centers: List[np.ndarray]) -> List[np.ndarray]:
        return [self.to_reduced(f, kind, i, c) for f, c in enumerate(centers)]

    # ---------- sweeps ----------

    def run(self, t: float, dt: float) -> None:
        if self.plan.two_site:
            self.run_two_site(t, dt)
            return
        for i in range(self.L):
            centers = self.reduced_centers("site", i, [s.cores[i] for s in self.states])
            new, targets = self._solve("site", i, centers, t, dt)
            new_state = [self.to_state(f, "site", i, M) for f, M in enumerate(new)]
            if i == self.L - 1:
                for s, M in zip(self.states, new_state):
                    s.cores[i] = M
                break
            if self.plan.scheme is Scheme.AP:
                self._decimate_ap(i, targets)
            else:
                self._decimate_ps(i, new_state, t, dt)
            logger.debug("site %d: ranks %s", i, [s.ranks[i + 1] for s in self.states])
        for s in self.states:
            s.center = self.L - 1

    def _decimate_ap(self, i: int, targets: List[List[np.ndarray]]) -> None:
        for f, s in enumerate(self.states):
            candidates = [self.to_state(f, "site", i, tgt[f]) for tgt in targets]
            left_block = self.blocks(f, "site", i)[0] if self.flavor is Flavor.P else None
            expansion = subspace_expand(candidates, self.flavor, self.plan.eps_in,
                                        left_block=left_block, oversample=self.plan.oversample,
                                        selector=self.plan.selector)
            s.cores[i + 1] = np.tensordot(expansion.weights[0], s.cores[i + 1], axes=(1, 0))
            _set_left_core(s, i, expansion.core, expansion.sel)
            s.oversampled = s.oversampled or expansion.oversampled
        self.advance(i)

    def _decimate_ps(self, i: int, new_state: List[np.ndarray], t: float, dt: float) -> None:
        bonds = []
        for f, s in enumerate(self.states):
            left_block = self.blocks(f, "site", i)[0] if self.flavor is Flavor.P else None
            core, W, sel = _factorize(new_state[f], self.flavor, left_block)
            _set_left_core(s, i, core, sel)
            bonds.append(W)
        self.advance(i)
        reduced = self.reduced_centers("bond", i, bonds)
        back, _ = self._solve("bond", i, reduced, t + dt, -dt)
        for f, s in enumerate(self.states):
            W = self.to_state(f, "bond", i, back[f])
            s.cores[i + 1] = np.tensordot(W, s.cores[i + 1], axes=(1, 0))

    def run_two_site(self, t: float, dt: float) -> None:
        L = self.L
        if L == 1:
            centers = self.reduced_centers("site", 0, [s.cores[0] for s in self.states])
            new, _ = self._solve("site", 0, centers, t, dt)
            for f, s in enumerate(self.states):
                s.cores[0] = self.to_state(f, "site", 0, new[f])
            return
        for i in range(L - 1):
            pairs = [np.einsum("asb,btc->astc", s.cores[i], s.cores[i + 1]) for s in self.states]
            new, _ = self._solve("pair", i, self.reduced_centers("pair", i, pairs), t, dt)
            trailing = []
            for f, s in enumerate(self.states):
                pair = self.to_state(f, "pair", i, new[f])
                r0, d0, d1, r1 = pair.shape
                mat = pair.reshape(r0 * d0, d1 * r1)
                if self.flavor is Flavor.X:
                    fac = cur(mat, eps=self.plan.eps_in, r_max=self.plan.r_max, selector=self.plan.selector)
                    core, rest, sel = fac.interp.reshape(r0, d0, -1), fac.rows, fac.row_idx
                else:
                    U, S, Vh, rank = svd_truncate(mat, eps=self.plan.eps_in, r_max=self.plan.r_max)
                    core, rest = U.reshape(r0, d0, rank), S[:, None] * Vh
                    sel = None
                    if self.flavor is Flavor.P:
                        sel = _select_on_basis(core, self.blocks(f, "site", i)[0])
                s.cores[i + 1] = rest.reshape(-1, d1, r1)
                _set_left_core(s, i, core, sel)
                trailing.append(s.cores[i + 1])
            self.advance(i)
            if i == L - 2:
                break
            reduced = self.reduced_centers("site", i + 1, trailing)
            back, _ = self._solve("site", i + 1, reduced, t + dt, -dt)
            for f, s in enumerate(self.states):
                s.cores[i + 1] = self.to_state(f, "site", i + 1, back[f])
        for s in self.states:
            s.center = L - 1


def _expand_for_sources(states: List[TtVector], model: DynamicsModel, plan: SweepPlan) -> List[TtVector]:
    """Enlarge each manifold so the source term is representable, keeping the state itself."""
    out = []
    for u, b in zip(states, model.sources):
        if b is None:
            out.append(u)
            continue
        manifold = prepare(add(u, b), plan.flavor, plan.selector, eps_internal=min(plan.eps_in, 1e-13))
        if plan.flavor is Flavor.X:
            env = EnvironmentPair.build(_selection_bra(manifold, 0), u.cores, None, 0)
        else:
            env = EnvironmentPair.build(_orthonormal_bra(manifold), u.cores, None, 0)
        manifold.cores[0] = env.site_apply(0, u.cores[0])
        out.append(manifold)
    return out


def _sweep(states: List[TtVector], model: DynamicsModel, plan: SweepPlan, t: float, dt: float,
           with_sources: bool) -> Tuple[List[TtVector], int]:
    prepared = [prepare(s, plan.flavor, plan.selector) for s in states]
    if with_sources and any(b is not None for b in model.sources):
        prepared = _expand_for_sources(prepared, model, plan)
    sweep = _Sweep(prepared, model, plan)
    sweep.run(t, dt)
    return sweep.states, sweep.n_eval


def two_site_step(states: List[TtVector], model: DynamicsModel, dt: float, t: float,
                  plan: SweepPlan) -> List[TtVector]:
    """One left-to-right two-site projector-splitting sweep (ranks adapt up to r_max at eps_in)."""
    if not plan.two_site:
        raise ValueError("plan does not request the two-site variant")
    out, _ = _sweep(states, model, plan, t, dt, with_sources=True)
    return out


def dlr_step(
    states: List[TtVector],
    model: DynamicsModel,
    dt: float,
    t: float,
    plan: SweepPlan,
    step: int = 0,
) -> Tuple[List[TtVector], DiagnosticsRecord]:
    """
    One dynamical low-rank time step of all fields.

    Canonicalizes, expands for source terms, sweeps (one sweep for AP; a
    forward and a backward half step for symmetric PS) and finally
    truncates at eps within [r_min, r_max].

    Args:
        states: One TtVector per field
        model: Dynamics
        dt: Time step
        t: Current time
        plan: Sweep configuration
        step: Step index for the diagnostics record

    Returns:
        (states at t + dt, DiagnosticsRecord)

    Raises:
        SolverDivergenceError: If a reduced solve produces non-finite values
    """
    if model.nonlinear and plan.flavor is Flavor.G:
        raise ValueError("orthogonal projection needs a linear model; use flavor X or P")
    if len(states) != model.n_fields:
        raise ValueError(f"{len(states)} states for {model.n_fields} fields")
    start = time.perf_counter()

    reverse = plan.direction is Direction.RIGHT_TO_LEFT
    current = [reversed_tt(s) for s in states] if reverse else list(states)
    current_model = model.reversed() if reverse else model

    n_eval = 0
    if plan.scheme is Scheme.PS and plan.symmetric:
        current, n1 = _sweep(current, current_model, plan, t, 0.5 * dt, with_sources=True)
        back = [reversed_tt(s) for s in current]
        back, n2 = _sweep(back, current_model.reversed(), plan, t + 0.5 * dt, 0.5 * dt, with_sources=False)
        current = [reversed_tt(s) for s in back]
        n_eval = n1 + n2
    else:
        current, n_eval = _sweep(current, current_model, plan, t, dt, with_sources=True)

    if reverse:
        current = [reversed_tt(s) for s in current]

    r_in = max(s.max_rank for s in current)
    out = []
    for s in current:
        for core in s.cores:
            if not np.all(np.isfinite(core)):
                raise SolverDivergenceError(f"non-finite core after step {step}")
        out.append(truncate(s, eps=plan.eps, r_max=plan.r_max, r_min=plan.r_min))

    record = DiagnosticsRecord(
        step=step,
        time=t + dt,
        flavor=plan.flavor.value,
        scheme=plan.scheme.value + ("-2site" if plan.two_site else ""),
        stepper=plan.stepper.value,
        r_in=r_in,
        r=max(s.max_rank for s in out),
        n_eval=n_eval,
        wall_seconds=time.perf_counter() - start,
    )
    logger.debug("step %d (%s-%s): r_in=%d r=%d n_eval=%d", step, record.scheme, record.flavor,
                 record.r_in, record.r, record.n_eval)
    return out, record
