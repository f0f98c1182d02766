"""
The three experiments: inviscid Burgers with Godunov upwinding, the TE
Maxwell cavity with a dielectric box, and magnetized advection of a
Gaussian in Fourier space.

Each experiment provides a setup dataclass, the DynamicsModel the low-rank
integrators evolve, its initial trains, the reduced right-hand side written
against effective operators, and a dense semi-discrete right-hand side used
by the dense oracle.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft

import config
from quantize import Basis, GridSpec, from_tensor_order, grid_points, real_space_points, to_tensor_order
from stepper import Coupling, DynamicsModel, Method, ReducedProblem, integrate
from ttcore import (
    TtOperator,
    TtVector,
    add_ops,
    apply_op,
    from_dense,
    identity_op,
    kron_op,
    sample,
    scale_op,
    truncate_op,
)
from ttopbuild import StencilSpec, axis_op, fd_op, fourier_derivative, moment_op, shift_op, zero_op

logger = logging.getLogger(__name__)


class ResonanceError(ValueError):
    """Driving frequency equals the cyclotron frequency."""


class DenseLimitError(MemoryError):
    """Grid too large for the dense oracle."""


# ============================================
# SHARED HELPERS
# ============================================

def grid_to_tt(values: np.ndarray, grid: GridSpec, eps: float = 1e-14, r_max: Optional[int] = None) -> TtVector:
    """TT of grid values given in natural order (dimension 0 slowest)."""
    return from_dense(to_tensor_order(np.asarray(values).reshape(-1), grid), grid.site_dims(), eps=eps, r_max=r_max)


def tt_to_grid(tt: TtVector, grid: GridSpec) -> np.ndarray:
    """Grid values of a train, natural order, shaped (N,) or (N, N)."""
    values = from_tensor_order(tt.dense(), grid)
    return values.reshape((grid.n_points,) * grid.n_dims)


def step_sizes(dt: float, t_final: float) -> List[float]:
    """Uniform steps of size dt to t_final; the last one is shortened to land on t_final."""
    if dt <= 0 or t_final < 0:
        raise ValueError(f"need dt > 0 and t_final >= 0, got dt={dt}, t_final={t_final}")
    n_full = int(np.floor(t_final / dt + 1e-9))
    steps = [dt] * n_full
    rest = t_final - n_full * dt
    if rest > 1e-12 * max(dt, 1.0):
        steps.append(rest)
    return steps


# ============================================
# BURGERS
# ============================================

class BurgersIC(Enum):
    SHOCK_FORMATION = "shock_formation"
    SHOCK_PROPAGATION = "shock_propagation"
    RAREFACTION = "rarefaction"


BURGERS_T_FINAL = {
    BurgersIC.SHOCK_FORMATION: 0.5,
    BurgersIC.SHOCK_PROPAGATION: 0.5,
    BurgersIC.RAREFACTION: 0.25,
}


@dataclass
class BurgersSetup:
    """Periodic Burgers on [0, 1) with 2^L cells and dt = 0.9 dx."""
    L: int = config.BURGERS_L
    ic: BurgersIC = BurgersIC.SHOCK_PROPAGATION
    t_final: Optional[float] = None
    cfl: float = config.BURGERS_CFL

    def __post_init__(self):
        if self.t_final is None:
            self.t_final = BURGERS_T_FINAL[self.ic]

    @property
    def grid(self) -> GridSpec:
        return GridSpec(L=self.L, n_dims=1, domain_lo=(0.0,), domain_hi=(1.0,))

    @property
    def dx(self) -> float:
        return self.grid.spacing(0)

    @property
    def dt(self) -> float:
        return self.cfl * self.dx


def godunov_flux(u_left, u_right):
    """
    Godunov state at an interface for f(u) = u^2/2.

    Shocks (u_left > u_right) take the upwind side of the Rankine-Hugoniot
    speed (u_left + u_right)/2; rarefactions take u_left when it moves right,
    u_right when it moves left and 0 when the fan spans the sonic point.
    """
    u_left = np.asarray(u_left)
    u_right = np.asarray(u_right)
    shock = u_left > u_right
    speed = 0.5 * (u_left + u_right)
    shock_state = np.where(speed > 0, u_left, u_right)
    fan_state = np.where(u_left > 0, u_left, np.where(u_right < 0, u_right, 0.0))
    return np.where(shock, shock_state, fan_state)


def burgers_rate(u: np.ndarray, u_plus: np.ndarray, u_minus: np.ndarray, dx: float) -> np.ndarray:
    """-(F_{j+1/2} - F_{j-1/2}) / dx with Godunov fluxes, elementwise."""
    flux_right = 0.5 * godunov_flux(u, u_plus) ** 2
    flux_left = 0.5 * godunov_flux(u_minus, u) ** 2
    return -(flux_right - flux_left) / dx


def burgers_reduced_rhs(
    M: np.ndarray,
    S_plus_eff: np.ndarray,
    S_minus_eff: np.ndarray,
    dt: float,
    dx: float,
) -> np.ndarray:
    """
    One upwind Euler update of the sampled center.

    Args:
        M: Samples of u at the selected points (any shape)
        S_plus_eff: Effective operator returning u at the right neighbours
        S_minus_eff: Effective operator returning u at the left neighbours
        dt: Time step
        dx: Cell width

    Returns:
        Updated samples, shaped like M
    """
    m = M.reshape(-1)
    out = m + dt * burgers_rate(m, S_plus_eff @ m, S_minus_eff @ m, dx)
    return out.reshape(M.shape)


@dataclass
class BurgersModel(DynamicsModel):
    """Burgers dynamics: couplings are the two neighbour shifts, the rate is the Godunov update."""
    dx: float = 1.0

    def rate(self, fields: List[np.ndarray], applied: List[np.ndarray], t: float) -> List[np.ndarray]:
        u_plus, u_minus = applied
        return [burgers_rate(fields[0], u_plus, u_minus, self.dx)]


def burgers_model(setup: BurgersSetup) -> BurgersModel:
    couplings = [
        Coupling(target=0, source=0, op=shift_op(setup.L, -1), name="u[j+1]"),
        Coupling(target=0, source=0, op=shift_op(setup.L, +1), name="u[j-1]"),
    ]
    return BurgersModel(n_fields=1, couplings=couplings, nonlinear=True, name="burgers", dx=setup.dx)


def burgers_initial_values(setup: BurgersSetup) -> np.ndarray:
    x = grid_points(setup.grid)[0]
    if setup.ic is BurgersIC.SHOCK_FORMATION:
        return np.sin(2.0 * np.pi * x)
    step = np.heaviside(x - 0.5, 1.0)
    if setup.ic is BurgersIC.SHOCK_PROPAGATION:
        return 1.0 - step
    return step


def burgers_initial(setup: BurgersSetup) -> List[TtVector]:
    return [grid_to_tt(burgers_initial_values(setup), setup.grid)]


def burgers_dense_step(u: np.ndarray, dt: float, dx: float) -> np.ndarray:
    return u + dt * burgers_rate(u, np.roll(u, -1), np.roll(u, 1), dx)


def burgers_dense_rhs(fields: List[np.ndarray], t: float, setup: BurgersSetup) -> List[np.ndarray]:
    u = fields[0]
    return [burgers_rate(u, np.roll(u, -1), np.roll(u, 1), setup.dx)]


def shock_position(u: np.ndarray, x: np.ndarray, level: float = 0.5) -> float:
    """First downward crossing of `level`, linearly interpolated; nan when there is none."""
    u = np.asarray(u).real
    above = u[:-1] >= level
    below = u[1:] < level
    hits = np.flatnonzero(above & below)
    if hits.size == 0:
        return float("nan")
    j = hits[0]
    frac = (u[j] - level) / (u[j] - u[j + 1])
    return float(x[j] + frac * (x[j + 1] - x[j]))


def total_mass(u: np.ndarray, dx: float) -> float:
    return float(np.sum(np.asarray(u).real) * dx)


# ============================================
# MAXWELL
# ============================================

EZ, BX, BY = 0, 1, 2
MAXWELL_FIELDS = ("Ez", "Bx", "By")


@dataclass
class MaxwellSetup:
    """TE cavity on [-1, 1)^2 with a tanh-edged dielectric box."""
    L: int = config.MAXWELL_L
    w: float = 10.0
    n_o: float = 10.0
    c: float = 1.0
    ic_width: float = 100.0
    cfl: float = config.MAXWELL_CFL
    t_final: float = config.MAXWELL_T_FINAL
    vacuum: bool = False

    @property
    def grid(self) -> GridSpec:
        return GridSpec(L=self.L, n_dims=2, domain_lo=(-1.0, -1.0), domain_hi=(1.0, 1.0))

    @property
    def dx(self) -> float:
        return self.grid.spacing(0)

    @property
    def dy(self) -> float:
        return self.grid.spacing(1)

    @property
    def dt(self) -> float:
        return self.cfl * self.dx / self.c


def _mesh(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    x, y = grid_points(grid)
    return np.meshgrid(x, y, indexing="ij")


def dielectric_mask(setup: MaxwellSetup) -> np.ndarray:
    """m(x, y) = 1/4 [tanh(w(x+1/2)) - tanh(w(x-1/2))] [same in y], natural order (N, N)."""
    X, Y = _mesh(setup.grid)
    w = setup.w
    mx = np.tanh(w * (X + 0.5)) - np.tanh(w * (X - 0.5))
    my = np.tanh(w * (Y + 0.5)) - np.tanh(w * (Y - 0.5))
    return 0.25 * mx * my


def inverse_index_squared(setup: MaxwellSetup) -> np.ndarray:
    """n^-2 = n_o^-2 (1 - m) + m, or 1 everywhere for a vacuum run."""
    if setup.vacuum:
        return np.ones((setup.grid.n_points,) * 2)
    m = dielectric_mask(setup)
    return (1.0 - m) / setup.n_o ** 2 + m


@dataclass
class MaxwellOperators:
    """Stencil operators of the cavity on the serial 2-D grid."""
    dx: TtOperator
    dy: TtOperator
    dxx: TtOperator
    dyy: TtOperator
    n_inv2: TtVector = field(repr=False, default=None)


def maxwell_operators(setup: MaxwellSetup) -> MaxwellOperators:
    L = setup.L
    d1x = fd_op(StencilSpec.centered_first(setup.dx), L)
    d1y = fd_op(StencilSpec.centered_first(setup.dy), L)
    d2x = fd_op(StencilSpec.centered_second(setup.dx), L)
    d2y = fd_op(StencilSpec.centered_second(setup.dy), L)
    return MaxwellOperators(
        dx=axis_op(d1x, 0, 2, L),
        dy=axis_op(d1y, 1, 2, L),
        dxx=axis_op(d2x, 0, 2, L),
        dyy=axis_op(d2y, 1, 2, L),
        n_inv2=grid_to_tt(inverse_index_squared(setup), setup.grid, eps=1e-12),
    )


def _const(value: float) -> Callable[[float], float]:
    def coeff(t: float) -> float:
        return value
    return coeff


def maxwell_model(setup: MaxwellSetup, ops: Optional[MaxwellOperators] = None) -> DynamicsModel:
    """
    Fields (Ez, Bx, By) with

        dEz/dt = c^2/n^2 (dBy/dx - dBx/dy) + c/2 (dx d2Ez/dx2 + dy d2Ez/dy2)
        dBx/dt = -dEz/dy + c dy/2 d2Bx/dy2
        dBy/dt =  dEz/dx + c dx/2 d2By/dx2
    """
    ops = ops or maxwell_operators(setup)
    c = setup.c
    damping = truncate_op(add_ops(scale_op(ops.dxx, setup.dx), scale_op(ops.dyy, setup.dy)), eps=1e-12)
    couplings = [
        Coupling(EZ, BY, ops.dx, _const(c ** 2), weight=ops.n_inv2, name="Ez<-By"),
        Coupling(EZ, BX, ops.dy, _const(-c ** 2), weight=ops.n_inv2, name="Ez<-Bx"),
        Coupling(EZ, EZ, damping, _const(0.5 * c), name="Ez<-Ez"),
        Coupling(BX, EZ, ops.dy, _const(-1.0), name="Bx<-Ez"),
        Coupling(BX, BX, ops.dyy, _const(0.5 * c * setup.dy), name="Bx<-Bx"),
        Coupling(BY, EZ, ops.dx, _const(1.0), name="By<-Ez"),
        Coupling(BY, BY, ops.dxx, _const(0.5 * c * setup.dx), name="By<-By"),
    ]
    return DynamicsModel(n_fields=3, couplings=couplings, name="maxwell")


def maxwell_initial_values(setup: MaxwellSetup) -> List[np.ndarray]:
    X, Y = _mesh(setup.grid)
    ez = np.exp(-(X ** 2 + Y ** 2) / setup.ic_width)
    return [ez, np.zeros_like(ez), np.zeros_like(ez)]


def maxwell_initial(setup: MaxwellSetup) -> List[TtVector]:
    return [grid_to_tt(v, setup.grid) for v in maxwell_initial_values(setup)]


def maxwell_reduced_rhs(
    fields: Sequence[np.ndarray],
    eff_ops: Dict[str, np.ndarray],
    n_inv2_eff: np.ndarray,
    setup: MaxwellSetup,
) -> List[np.ndarray]:
    """
    Time derivatives of (Ez, Bx, By) at their selected points.

    Args:
        fields: Sampled centers of Ez, Bx and By
        eff_ops: Effective operators keyed "dx:By->Ez", "dy:Bx->Ez",
            "damp:Ez->Ez", "dy:Ez->Bx", "dyy:Bx->Bx", "dx:Ez->By", "dxx:By->By"
        n_inv2_eff: n^-2 sampled at the points of Ez
        setup: Cavity parameters

    Returns:
        [dEz/dt, dBx/dt, dBy/dt], shaped like the inputs
    """
    ez, bx, by = (np.asarray(f).reshape(-1) for f in fields)
    c = setup.c
    d_ez = (c ** 2 * n_inv2_eff.reshape(-1) * (eff_ops["dx:By->Ez"] @ by - eff_ops["dy:Bx->Ez"] @ bx)
            + 0.5 * c * (eff_ops["damp:Ez->Ez"] @ ez))
    d_bx = -(eff_ops["dy:Ez->Bx"] @ ez) + 0.5 * c * setup.dy * (eff_ops["dyy:Bx->Bx"] @ bx)
    d_by = eff_ops["dx:Ez->By"] @ ez + 0.5 * c * setup.dx * (eff_ops["dxx:By->By"] @ by)
    return [d.reshape(np.shape(f)) for d, f in zip((d_ez, d_bx, d_by), fields)]


def _d1(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)


def _d2(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / h ** 2


def maxwell_dense_rhs(fields: List[np.ndarray], t: float, setup: MaxwellSetup,
                      n_inv2: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """Semi-discrete right-hand side on natural (N, N) arrays, x along axis 0."""
    ez, bx, by = fields
    n_inv2 = inverse_index_squared(setup) if n_inv2 is None else n_inv2
    c, hx, hy = setup.c, setup.dx, setup.dy
    d_ez = c ** 2 * n_inv2 * (_d1(by, 0, hx) - _d1(bx, 1, hy)) + 0.5 * c * (hx * _d2(ez, 0, hx) + hy * _d2(ez, 1, hy))
    d_bx = -_d1(ez, 1, hy) + 0.5 * c * hy * _d2(bx, 1, hy)
    d_by = _d1(ez, 0, hx) + 0.5 * c * hx * _d2(by, 0, hx)
    return [d_ez, d_bx, d_by]


def maxwell_energy(fields: Sequence[np.ndarray], setup: MaxwellSetup) -> float:
    """sum(Ez^2 + Bx^2 + By^2) dx dy."""
    return float(sum(np.sum(np.abs(f) ** 2) for f in fields) * setup.dx * setup.dy)


# ============================================
# MAGNETIZED ADVECTION
# ============================================

@dataclass
class AdvectionSetup:
    """Gaussian in (v_x, v_y) driven by E_x = E_0 cos(omega t) and a constant B_z."""
    L: int = config.ADVECTION_L
    B0: float = 1.0
    qm: float = -1.0
    v_th: float = 1.0
    E0: float = 0.9
    omega: float = 0.4567
    half_width: float = config.ADVECTION_DOMAIN_HALF_WIDTH
    t_final: float = config.ADVECTION_T_FINAL
    dt: float = 0.1

    @property
    def omega_c(self) -> float:
        return self.qm * self.B0

    @property
    def grid(self) -> GridSpec:
        """Fourier modes of the velocity box [-half_width, half_width)^2."""
        h = self.half_width * self.v_th
        return GridSpec(L=self.L, n_dims=2, domain_lo=(-h, -h), domain_hi=(h, h), basis=Basis.FOURIER)

    @property
    def dv(self) -> float:
        return self.grid.spacing(0)


@dataclass
class AdvectionOperators:
    """Per-axis pieces of the generator: spectral derivatives and velocity multipliers."""
    d_x: TtOperator
    d_y: TtOperator
    d_x_v_y: TtOperator
    v_x_d_y: TtOperator


def advection_operators(setup: AdvectionSetup, eps: float = 1e-12) -> AdvectionOperators:
    L = setup.L
    g1 = setup.grid.one_dimensional(0)
    D = fourier_derivative(g1)
    V = moment_op(1, g1)
    I = identity_op([2] * L)
    return AdvectionOperators(
        d_x=kron_op(D, I),
        d_y=kron_op(I, D),
        d_x_v_y=truncate_op(kron_op(D, V), eps=eps),
        v_x_d_y=truncate_op(kron_op(V, D), eps=eps),
    )


def advection_model(setup: AdvectionSetup, ops: Optional[AdvectionOperators] = None) -> DynamicsModel:
    """df/dt = -q/m [E_0 cos(omega t) D_x + B_0 D_x V_y - B_0 V_x D_y] f in mode space."""
    ops = ops or advection_operators(setup)
    qm, E0, B0, omega = setup.qm, setup.E0, setup.B0, setup.omega

    def electric(t: float) -> float:
        return -qm * E0 * np.cos(omega * t)

    couplings = []
    if E0 != 0.0:
        couplings.append(Coupling(0, 0, ops.d_x, electric, name="E"))
    if B0 != 0.0:
        couplings.append(Coupling(0, 0, ops.d_x_v_y, _const(-qm * B0), name="vy*dvx"))
        couplings.append(Coupling(0, 0, ops.v_x_d_y, _const(qm * B0), name="vx*dvy"))
    return DynamicsModel(n_fields=1, couplings=couplings, name="advection")


def advection_operator(t: float, setup: AdvectionSetup, ops: Optional[AdvectionOperators] = None,
                       eps: float = 1e-12) -> TtOperator:
    """The generator A(t) as a single complex operator."""
    model = advection_model(setup, ops)
    total: Optional[TtOperator] = None
    for c in model.couplings:
        term = scale_op(c.op, c.coeff(t))
        total = term if total is None else add_ops(total, term)
    if total is None:
        return zero_op(setup.grid.site_dims())
    return truncate_op(total, eps=eps)


def analytic_drift(t: float, setup: AdvectionSetup) -> Tuple[float, float]:
    """
    Centre of the drifting Gaussian, u(0) = 0.

    With omega_c = q/m B_0 and K = q/m E_0 / (omega^2 - omega_c^2):
    u_x = K (omega sin(omega t) - omega_c sin(omega_c t)),
    u_y = K omega_c (cos(omega t) - cos(omega_c t)).

    Raises:
        ResonanceError: If |omega| = |omega_c|
    """
    omega, omega_c = setup.omega, setup.omega_c
    if np.isclose(abs(omega), abs(omega_c), rtol=0.0, atol=1e-12):
        raise ResonanceError(f"omega={omega} resonates with omega_c={omega_c}")
    K = setup.qm * setup.E0 / (omega ** 2 - omega_c ** 2)
    u_x = K * (omega * np.sin(omega * t) - omega_c * np.sin(omega_c * t))
    u_y = K * omega_c * (np.cos(omega * t) - np.cos(omega_c * t))
    return float(u_x), float(u_y)


def _velocity_mesh(setup: AdvectionSetup) -> Tuple[np.ndarray, np.ndarray]:
    vx, vy = real_space_points(setup.grid)
    return np.meshgrid(vx, vy, indexing="ij")


def gaussian_modes(u_x: float, u_y: float, setup: AdvectionSetup) -> np.ndarray:
    """FFT (natural (N, N) mode order) of the Gaussian centred at (u_x, u_y)."""
    VX, VY = _velocity_mesh(setup)
    f = np.exp(-((VX - u_x) ** 2 + (VY - u_y) ** 2) / (2.0 * setup.v_th ** 2))
    return fft.fft2(f)


def reference_modes(t: float, setup: AdvectionSetup) -> np.ndarray:
    return gaussian_modes(*analytic_drift(t, setup), setup)


def advection_initial(setup: AdvectionSetup) -> List[TtVector]:
    return [grid_to_tt(gaussian_modes(0.0, 0.0, setup), setup.grid)]


def distribution_error_modes(f_hat: np.ndarray, t: float, setup: AdvectionSetup) -> float:
    """L2 distance in velocity space, computed from mode arrays by Parseval."""
    N = setup.grid.n_points
    diff = np.asarray(f_hat).reshape(N, N) - reference_modes(t, setup)
    return float(np.sqrt(setup.dv ** 2 / N ** 2 * np.sum(np.abs(diff) ** 2)))


def analytic_distribution_error(state: TtVector, t: float, setup: AdvectionSetup) -> float:
    """L2 error of a Fourier-space train against the drifted Gaussian."""
    return distribution_error_modes(tt_to_grid(state, setup.grid), t, setup)


def _moment_ratio(state: TtVector, op: TtOperator) -> complex:
    zero = [0] * state.L
    return sample(apply_op(op, state), zero) / sample(state, zero)


def drift_from_state(state: TtVector, setup: AdvectionSetup) -> Tuple[float, float]:
    """First moments over the zeroth moment, read off mode (0, 0)."""
    L = setup.L
    g1 = setup.grid.one_dimensional(0)
    V = moment_op(1, g1)
    u_x = _moment_ratio(state, axis_op(V, 0, 2, L))
    u_y = _moment_ratio(state, axis_op(V, 1, 2, L))
    return float(np.real(u_x)), float(np.real(u_y))


def variance_from_state(state: TtVector, setup: AdvectionSetup) -> float:
    """<|v - u|^2> of the distribution; 2 v_th^2 for the unperturbed Gaussian."""
    L = setup.L
    g1 = setup.grid.one_dimensional(0)
    V2 = moment_op(2, g1)
    second = _moment_ratio(state, axis_op(V2, 0, 2, L)) + _moment_ratio(state, axis_op(V2, 1, 2, L))
    u_x, u_y = drift_from_state(state, setup)
    return float(np.real(second)) - (u_x ** 2 + u_y ** 2)


def advection_dense_rhs(fields: List[np.ndarray], t: float, setup: AdvectionSetup) -> List[np.ndarray]:
    """Generator applied to natural (N, N) modes, velocity products done through the FFT."""
    f_hat = fields[0]
    N = setup.grid.n_points
    k = grid_points(setup.grid.one_dimensional(0))[0].copy()
    k[N // 2] = 0.0
    VX, VY = _velocity_mesh(setup)
    dfx = 1j * k[:, None] * f_hat
    dfy = 1j * k[None, :] * f_hat
    qm, B0 = setup.qm, setup.B0
    out = -qm * setup.E0 * np.cos(setup.omega * t) * dfx
    if B0 != 0.0:
        out = out - qm * B0 * (fft.fft2(VY * fft.ifft2(dfx)) - fft.fft2(VX * fft.ifft2(dfy)))
    return [out]


# ============================================
# DENSE ORACLE
# ============================================

@dataclass
class DenseTrajectory:
    """Times and natural-order field arrays of a dense run."""
    times: List[float]
    states: List[List[np.ndarray]]

    @property
    def final(self) -> List[np.ndarray]:
        return self.states[-1]


def dense_problem(problem: str, setup) -> Tuple[Callable, List[np.ndarray], bool]:
    """(rhs(fields, t), initial natural-order fields, is_linear) of an experiment."""
    if problem == "burgers":
        return (lambda f, t: burgers_dense_rhs(f, t, setup)), [burgers_initial_values(setup)], False
    if problem == "maxwell":
        n_inv2 = inverse_index_squared(setup)
        return (lambda f, t: maxwell_dense_rhs(f, t, setup, n_inv2)), maxwell_initial_values(setup), True
    if problem == "advection":
        return (lambda f, t: advection_dense_rhs(f, t, setup)), [gaussian_modes(0.0, 0.0, setup)], True
    raise ValueError(f"unknown problem {problem!r}")


def dense_reference(
    problem: str,
    setup,
    dt: Optional[float] = None,
    t_final: Optional[float] = None,
    method: Method = Method.EULER,
    keep_every: int = 0,
) -> DenseTrajectory:
    """
    Full-grid solution of the same semi-discretization and time stepper.

    Args:
        problem: "burgers", "maxwell" or "advection"
        setup: Matching setup dataclass
        dt: Time step (setup.dt if omitted)
        t_final: End time (setup.t_final if omitted)
        method: Time integrator; Burgers only uses Euler
        keep_every: Store every n-th state (0 keeps the initial and final ones)

    Returns:
        DenseTrajectory

    Raises:
        DenseLimitError: If the grid exceeds DENSE_POINT_LIMIT points
    """
    grid = setup.grid
    if grid.size > config.DENSE_POINT_LIMIT:
        raise DenseLimitError(f"{grid.size} grid points exceed the dense limit {config.DENSE_POINT_LIMIT}")
    if problem == "burgers" and method is not Method.EULER:
        raise ValueError("the Burgers scheme is an explicit Euler update")
    rhs, fields, linear = dense_problem(problem, setup)
    dt = setup.dt if dt is None else dt
    t_final = setup.t_final if t_final is None else t_final

    shape = fields[0].shape
    n = fields[0].size

    def apply(y: np.ndarray, t: float) -> np.ndarray:
        parts = [y[k * n:(k + 1) * n].reshape(shape) for k in range(len(fields))]
        return np.concatenate([r.reshape(-1) for r in rhs(parts, t)])

    rp = ReducedProblem(apply=apply, is_linear=linear)
    y = np.concatenate([f.reshape(-1) for f in fields])

    def unpack(vec):
        return [vec[k * n:(k + 1) * n].reshape(shape).copy() for k in range(len(fields))]

    times, states = [0.0], [unpack(y)]
    t = 0.0
    steps = step_sizes(dt, t_final)
    for k, h in enumerate(steps, start=1):
        y, _ = integrate(method, rp, y, t, h)
        t += h
        if k == len(steps) or (keep_every and k % keep_every == 0):
            times.append(t)
            states.append(unpack(y))
    logger.info("dense %s: %d steps to t=%.4f", problem, len(steps), t)
    return DenseTrajectory(times=times, states=states)
