"""
Quantization of uniform grids into binary multi-indices.

A grid of 2^L points per dimension is addressed by L bits per dimension.
In real space the first bit is the most significant one (x = lo + (hi - lo)
* sum 2^-k sigma_k); in Fourier space the first bit is the least significant
one, so that the low-frequency modes sit on the first sites. Fourier modes
are stored in FFT order (0, +1, ..., -1) before the bits are assigned.

Every tensor-train in this package flattens its cores in C order over the
sites; `tensor_order` gives the permutation between that "tensor order" and
the natural flat index of a grid vector.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from scipy import fft


class Basis(Enum):
    """What the grid coefficients represent."""
    REAL_SPACE = "real"
    FOURIER = "fourier"


class BitOrder(Enum):
    """How the bits of several dimensions are laid out along the train."""
    SERIAL = "serial"
    INTERLEAVED = "interleaved"


@dataclass(frozen=True)
class GridSpec:
    """Uniform 2^L-point grid in one or two dimensions."""
    L: int
    n_dims: int = 1
    domain_lo: Tuple[float, ...] = (0.0,)
    domain_hi: Tuple[float, ...] = (1.0,)
    basis: Basis = Basis.REAL_SPACE
    bit_order: BitOrder = BitOrder.SERIAL

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.n_dims not in (1, 2):
            raise ValueError(f"n_dims must be 1 or 2, got {self.n_dims}")
        if len(self.domain_lo) != self.n_dims or len(self.domain_hi) != self.n_dims:
            raise ValueError("domain bounds must have one entry per dimension")
        for lo, hi in zip(self.domain_lo, self.domain_hi):
            if not hi > lo:
                raise ValueError(f"empty domain [{lo}, {hi})")

    @property
    def n_points(self) -> int:
        """Grid points per dimension."""
        return 2 ** self.L

    @property
    def n_sites(self) -> int:
        return self.L * self.n_dims

    @property
    def size(self) -> int:
        return self.n_points ** self.n_dims

    def spacing(self, dim: int = 0) -> float:
        """Real-space spacing of dimension `dim`."""
        return (self.domain_hi[dim] - self.domain_lo[dim]) / self.n_points

    def site_dims(self) -> List[int]:
        return [2] * self.n_sites

    def one_dimensional(self, dim: int = 0) -> "GridSpec":
        """The 1-D grid of a single dimension."""
        return GridSpec(
            L=self.L,
            n_dims=1,
            domain_lo=(self.domain_lo[dim],),
            domain_hi=(self.domain_hi[dim],),
            basis=self.basis,
            bit_order=self.bit_order,
        )


def flat_to_bits(n: int, spec: GridSpec) -> np.ndarray:
    """
    Bits (sigma_1, ..., sigma_L) of a 1-D grid index.

    Args:
        n: Grid index in [0, 2^L)
        spec: Grid specification (only L and basis are used)

    Returns:
        Integer array of L bits
    """
    if not 0 <= n < spec.n_points:
        raise ValueError(f"index {n} outside [0, {spec.n_points})")
    if spec.basis is Basis.REAL_SPACE:
        shifts = np.arange(spec.L - 1, -1, -1)
    else:
        shifts = np.arange(spec.L)
    return (n >> shifts) & 1


def bits_to_flat(bits: Sequence[int], spec: GridSpec) -> int:
    """Inverse of `flat_to_bits`."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.shape != (spec.L,):
        raise ValueError(f"expected {spec.L} bits, got shape {bits.shape}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    if spec.basis is Basis.REAL_SPACE:
        weights = 2 ** np.arange(spec.L - 1, -1, -1)
    else:
        weights = 2 ** np.arange(spec.L)
    return int(np.dot(bits, weights))


def bits_to_coordinate(bits: Sequence[int], spec: GridSpec, dim: int = 0) -> float:
    """Real-space grid point lo + (hi - lo) * sum 2^-k sigma_k."""
    if spec.basis is not Basis.REAL_SPACE:
        raise ValueError("coordinates are defined for real-space grids only")
    bits = np.asarray(bits, dtype=float)
    fraction = np.dot(bits, 2.0 ** -np.arange(1, spec.L + 1))
    lo, hi = spec.domain_lo[dim], spec.domain_hi[dim]
    return lo + (hi - lo) * fraction


def _site_axes(spec: GridSpec) -> List[int]:
    # axes of the natural C-order reshape are (dim0 MSB..LSB, dim1 MSB..LSB)
    per_dim = []
    for dim in range(spec.n_dims):
        axes = [dim * spec.L + j for j in range(spec.L)]
        if spec.basis is Basis.FOURIER:
            axes = axes[::-1]
        per_dim.append(axes)
    if spec.n_dims == 1 or spec.bit_order is BitOrder.SERIAL:
        return [axis for axes in per_dim for axis in axes]
    return [per_dim[dim][k] for k in range(spec.L) for dim in range(spec.n_dims)]


def tensorize(v: np.ndarray, spec: GridSpec) -> np.ndarray:
    """
    Reshape a grid vector into its L*n_dims-way quantized tensor.

    Args:
        v: Vector of length 2^(L*n_dims), natural flat order (dimension 0 slowest)
        spec: Grid specification

    Returns:
        Tensor of shape (2,)*(L*n_dims) indexed by (sigma_1, ..., sigma_n)
    """
    v = np.asarray(v)
    if v.size != spec.size:
        raise ValueError(f"vector of length {v.size} does not match grid of {spec.size} points")
    natural = v.reshape((2,) * spec.n_sites)
    return np.transpose(natural, _site_axes(spec))


def detensorize(tensor: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Inverse of `tensorize`."""
    tensor = np.asarray(tensor)
    if tensor.shape != (2,) * spec.n_sites:
        raise ValueError(f"tensor shape {tensor.shape} does not match grid")
    inverse = np.argsort(_site_axes(spec))
    return np.transpose(tensor, inverse).reshape(-1)


def tensor_order(spec: GridSpec) -> np.ndarray:
    """
    Permutation `perm` with tensor_flat[p] = v[perm[p]].

    `v[tensor_order(spec)]` is the vector a TT of this grid contracts to.
    """
    return tensorize(np.arange(spec.size), spec).reshape(-1)


def to_tensor_order(v: np.ndarray, spec: GridSpec) -> np.ndarray:
    return np.asarray(v).reshape(-1)[tensor_order(spec)]


def from_tensor_order(t: np.ndarray, spec: GridSpec) -> np.ndarray:
    v = np.empty_like(np.asarray(t).reshape(-1))
    v[tensor_order(spec)] = np.asarray(t).reshape(-1)
    return v


def grid_points(spec: GridSpec) -> List[np.ndarray]:
    """
    Coordinates of each dimension.

    Real space: lo + n*dx for n = 0..2^L-1.
    Fourier: angular wavenumbers 2*pi*fftfreq(2^L, dx), FFT order.
    """
    points = []
    for dim in range(spec.n_dims):
        dx = spec.spacing(dim)
        if spec.basis is Basis.REAL_SPACE:
            points.append(spec.domain_lo[dim] + dx * np.arange(spec.n_points))
        else:
            points.append(2.0 * np.pi * fft.fftfreq(spec.n_points, d=dx))
    return points


def real_space_points(spec: GridSpec) -> List[np.ndarray]:
    """Real-space coordinates behind a grid, whatever its basis."""
    return [spec.domain_lo[d] + spec.spacing(d) * np.arange(spec.n_points) for d in range(spec.n_dims)]
