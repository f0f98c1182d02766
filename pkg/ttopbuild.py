"""
Builders for the structured QTT operators used by the experiments.

Real-space builders (shifts, stencils) assume the MSB-first bit order of
`quantize`; Fourier builders (convolution, moments, spectral derivative)
assume the LSB-first order with modes in FFT order.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from scipy import fft

from quantize import Basis, GridSpec, real_space_points, grid_points, to_tensor_order
from ttcore import (
    TtOperator,
    TtVector,
    add_ops,
    compose,
    from_dense,
    identity_op,
    kron_op,
    scale_op,
    truncate_op,
)

logger = logging.getLogger(__name__)

MAX_STENCIL_OFFSET = 2


class Boundary(Enum):
    PERIODIC = "periodic"


@dataclass
class StencilSpec:
    """
    Finite-difference stencil scale * sum_o coeffs[o] * u_{j+o}.

    Attributes:
        coeffs: Offset -> coefficient, offsets in [-2, 2]
        scale: Common prefactor (e.g. 1/dx)
        boundary: Only periodic boundaries are built
    """
    coeffs: Dict[int, float] = field(default_factory=dict)
    scale: float = 1.0
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        for offset in self.coeffs:
            if abs(int(offset)) > MAX_STENCIL_OFFSET or int(offset) != offset:
                raise ValueError(f"stencil offset {offset} outside [-2, 2]")
        if not np.isfinite(self.scale):
            raise ValueError(f"stencil scale must be finite, got {self.scale}")

    @classmethod
    def centered_first(cls, dx: float) -> "StencilSpec":
        return cls(coeffs={-1: -0.5, 1: 0.5}, scale=1.0 / dx)

    @classmethod
    def centered_second(cls, dx: float) -> "StencilSpec":
        return cls(coeffs={-1: 1.0, 0: -2.0, 1: 1.0}, scale=1.0 / dx ** 2)


def _carry_core(direction: int) -> np.ndarray:
    """W[c_left, s_out, s_in, c_right] for binary add/subtract with carry."""
    core = np.zeros((2, 2, 2, 2))
    for s_in in range(2):
        for c_in in range(2):
            total = s_in + direction * c_in
            s_out = total % 2
            c_out = 1 if (total > 1 or total < 0) else 0
            core[c_out, s_out, s_in, c_in] = 1.0
    return core


def shift_op(L: int, direction: int, periodic: bool = True) -> TtOperator:
    """
    Cyclic shift on a 2^L real-space grid, as a rank-2 QTT.

    direction=+1 maps e_n to e_{n+1}, so (S u)_j = u_{j-1}; direction=-1
    is its inverse. The carry runs from the last site (LSB) to the first.
    Non-periodic shifts drop the wrapped entry.
    """
    if L < 1:
        raise ValueError(f"L must be positive, got {L}")
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    core = _carry_core(direction)
    first = core.sum(axis=0, keepdims=True) if periodic else core[:1]
    if L == 1:
        return TtOperator([first[:, :, :, 1:]])
    cores = [first] + [core.copy() for _ in range(L - 2)] + [core[:, :, :, 1:]]
    return TtOperator(cores)


def zero_op(dims: List[int]) -> TtOperator:
    return TtOperator([np.zeros((1, d, d, 1)) for d in dims])


def _offset_op(L: int, offset: int) -> TtOperator:
    # (T_o u)_j = u_{j+o}
    if offset == 0:
        return identity_op([2] * L)
    step = shift_op(L, -1 if offset > 0 else 1)
    out = step
    for _ in range(abs(offset) - 1):
        out = compose(out, step)
    return truncate_op(out, eps=1e-14)


def fd_op(spec: StencilSpec, L: int, eps: float = 1e-12) -> TtOperator:
    """Periodic stencil operator scale * sum_o coeffs[o] T_o, rounded at eps."""
    terms = [(o, c) for o, c in sorted(spec.coeffs.items()) if c != 0.0]
    if not terms or spec.scale == 0.0:
        return zero_op([2] * L)
    total: Optional[TtOperator] = None
    for offset, coeff in terms:
        term = scale_op(_offset_op(L, offset), coeff * spec.scale)
        total = term if total is None else add_ops(total, term)
    return truncate_op(total, eps=eps)


def diag_op(v: TtVector) -> TtOperator:
    """diag(dense(v)) with the ranks of v."""
    cores = []
    for core in v.cores:
        d = core.shape[1]
        cores.append(np.einsum("asb,st->astb", core, np.eye(d)))
    return TtOperator(cores)


def axis_op(op_1d: TtOperator, dim: int, n_dims: int, L: int) -> TtOperator:
    """Embed a 1-D operator on dimension `dim` of a serial multi-dimensional grid."""
    out: Optional[TtOperator] = None
    for k in range(n_dims):
        part = op_1d if k == dim else identity_op([2] * L)
        out = part if out is None else kron_op(out, part)
    return out


# ============================================
# FOURIER-SPACE OPERATORS
# ============================================

def conv_tensor(L: int, n_dims: int = 1) -> TtVector:
    """
    QTT of C(i, j, k) = 1 iff k = i + j (mod 2^L), per dimension.

    Sites carry the merged index i*4 + j*2 + k (d = 8). Bits are LSB first,
    so the carry runs left to right; the wrapped carry of the last site is
    summed away. The result has rank 2.
    """
    core = np.zeros((2, 8, 2))
    for c_in in range(2):
        for i in range(2):
            for j in range(2):
                total = i + j + c_in
                core[c_in, i * 4 + j * 2 + total % 2, total // 2] = 1.0
    if L == 1:
        per_dim = [core[:1].sum(axis=2, keepdims=True)]
    else:
        per_dim = [core[:1]] + [core.copy() for _ in range(L - 2)] + [core.sum(axis=2, keepdims=True)]
    return TtVector([c.copy() for _ in range(n_dims) for c in per_dim])


def conv_with_vector_op(g_hat: TtVector, n_dims: int = 1, eps: float = 1e-14) -> TtOperator:
    """
    Circular convolution by g in mode space: (M f)_k = sum_j g_{k-j} f_j.

    Each site contracts the convolving vector's core with the convolution
    tensor core over the shared index i; the product is then rounded.
    For n_dims = 2 the vector lives on a serial grid and the convolution
    runs over both dimensions.
    """
    if g_hat.L % n_dims != 0:
        raise ValueError(f"{g_hat.L} sites cannot be split into {n_dims} dimensions")
    conv_cores = conv_tensor(g_hat.L // n_dims, n_dims).cores
    cores = []
    for G, C in zip(g_hat.cores, conv_cores):
        ra, _, rb = G.shape
        ca, _, cb = C.shape
        C5 = C.reshape(ca, 2, 2, 2, cb)  # (c_in, i, j, k, c_out)
        W = np.einsum("aib,cijkd->ackjbd", G, C5)
        cores.append(W.reshape(ra * ca, 2, 2, rb * cb))
    return truncate_op(TtOperator(cores), eps=eps)


def moment_op(m: int, spec: GridSpec, eps: float = 1e-10) -> TtOperator:
    """
    Multiplication by x^m in real space, as an operator on FFT coefficients.

    With f_hat = fft(f), fft(x^m f) = fft(x^m)/N circularly convolved with
    f_hat, so this is conv_with_vector_op of fft(x^m)/N.

    Args:
        m: Moment order (1 or 2)
        spec: One-dimensional Fourier grid
        eps: Rounding tolerance

    Returns:
        TtOperator on L sites
    """
    if m not in (1, 2):
        raise ValueError(f"moment order must be 1 or 2, got {m}")
    if spec.basis is not Basis.FOURIER or spec.n_dims != 1:
        raise ValueError("moment operators are built on a one-dimensional Fourier grid")
    x = real_space_points(spec)[0]
    g = fft.fft(x ** m) / spec.n_points
    g_tt = from_dense(to_tensor_order(g, spec), spec.site_dims(), eps=1e-15)
    return conv_with_vector_op(g_tt, eps=eps)


def fourier_derivative(spec: GridSpec, eps: float = 1e-14) -> TtOperator:
    """diag(i k) on a one-dimensional Fourier grid, Nyquist mode set to zero."""
    if spec.basis is not Basis.FOURIER or spec.n_dims != 1:
        raise ValueError("spectral derivatives are built on a one-dimensional Fourier grid")
    k = grid_points(spec)[0].copy()
    k[spec.n_points // 2] = 0.0
    ik = from_dense(to_tensor_order(1j * k, spec), spec.site_dims(), eps=eps)
    return diag_op(ik)
