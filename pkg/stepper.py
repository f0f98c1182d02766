"""
Time integrators for reduced (site) problems and the global
step-and-truncate integrator.

Also home of the problem description shared by `sat_step` and the sweep
engine in `dlra`: couplings between fields, the dynamics model that
combines them, and the per-step diagnostics record.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

import config
from matalg import cgs_solve
from ttcore import (
    TtOperator,
    TtVector,
    add,
    apply_op,
    compose,
    reversed_op,
    reversed_tt,
    scale,
    truncate,
)
from ttopbuild import diag_op

logger = logging.getLogger(__name__)


class Method(Enum):
    EULER = "euler"
    RK4 = "rk4"
    CN = "cn"


class SolverDivergenceError(RuntimeError):
    """A time step produced non-finite values or an implicit solve failed."""


@dataclass
class ReducedProblem:
    """
    dM/dt = apply(M, t).

    Attributes:
        apply: Right-hand side callback
        is_linear: True when apply is affine in M (required by CN)
        matrix: Optional dense linear part A(t); CN falls back to a
            matrix-free operator built from `apply` when absent
    """
    apply: Callable[[np.ndarray, float], np.ndarray]
    is_linear: bool = False
    matrix: Optional[Callable[[float], np.ndarray]] = None


def _check_finite(M: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(M)):
        raise SolverDivergenceError(f"non-finite values after {what}")


def euler(rp: ReducedProblem, M: np.ndarray, t: float, dt: float) -> np.ndarray:
    out = M + dt * rp.apply(M, t)
    _check_finite(out, "Euler step")
    return out


def rk4(rp: ReducedProblem, M: np.ndarray, t: float, dt: float) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Classical fourth-order Runge-Kutta step.

    Returns:
        (new state, [stage inputs y, y + dt/2 k1, y + dt/2 k2, y + dt k3])
    """
    k1 = rp.apply(M, t)
    y2 = M + 0.5 * dt * k1
    k2 = rp.apply(y2, t + 0.5 * dt)
    y3 = M + 0.5 * dt * k2
    k3 = rp.apply(y3, t + 0.5 * dt)
    y4 = M + dt * k3
    k4 = rp.apply(y4, t + dt)
    out = M + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(out, "RK4 step")
    return out, [M, y2, y3, y4]


def crank_nicolson(
    rp: ReducedProblem,
    M: np.ndarray,
    t: float,
    dt: float,
    tol: float = config.CGS_TOL,
) -> np.ndarray:
    """
    Crank-Nicolson step with the operator frozen at t + dt/2.

    Solves (I - dt/2 A) M' = M + dt/2 A M + dt b with CGS, where the affine
    right-hand side is A M + b.

    Raises:
        ValueError: If the problem is not linear
        SolverDivergenceError: If CGS stops far above the tolerance
    """
    if not rp.is_linear:
        raise ValueError("Crank-Nicolson needs a linear reduced problem")
    if dt == 0.0:
        return M.copy()
    t_mid = t + 0.5 * dt
    shape = M.shape
    offset = rp.apply(np.zeros_like(M), t_mid)
    if rp.matrix is not None:
        A = rp.matrix(t_mid)

        def linear_part(v):
            return (A @ v.reshape(-1)).reshape(shape)
    else:
        def linear_part(v):
            return rp.apply(v, t_mid) - offset

    rhs = M + 0.5 * dt * linear_part(M) + dt * offset
    result = cgs_solve(lambda v: v - 0.5 * dt * linear_part(v), rhs, tol=tol, x0=M)
    if not result.converged and result.residual > 100.0 * tol:
        raise SolverDivergenceError(
            f"CGS did not converge in the Crank-Nicolson solve (residual {result.residual:.3e})"
        )
    _check_finite(result.x, "Crank-Nicolson step")
    return result.x


def integrate(
    method: Method,
    rp: ReducedProblem,
    M: np.ndarray,
    t: float,
    dt: float,
    rk4_targets: str = "stages",
    tol: float = config.CGS_TOL,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    One step of `method`, also returning the states a subspace expansion should target.

    Targets always start with M(t) and end with M(t + dt). RK4 targets the
    stage inputs, or with rk4_targets="thirds" the states at t + dt/3 and
    t + 2 dt/3 (the step is then taken as three RK4 sub-steps).
    """
    if method is Method.EULER:
        out = euler(rp, M, t, dt)
        return out, [M, out]
    if method is Method.RK4:
        if rk4_targets == "thirds":
            states = [M]
            y = M
            for k in range(3):
                y, _ = rk4(rp, y, t + k * dt / 3.0, dt / 3.0)
                states.append(y)
            return y, states
        if rk4_targets != "stages":
            raise ValueError(f"unknown RK4 targeting {rk4_targets!r}")
        out, stages = rk4(rp, M, t, dt)
        return out, stages + [out]
    if method is Method.CN:
        out = crank_nicolson(rp, M, t, dt, tol=tol)
        return out, [M, out]
    raise ValueError(f"unknown method {method}")


# ============================================
# PROBLEM DESCRIPTION
# ============================================

def _unit(t: float) -> float:
    return 1.0


@dataclass
class Coupling:
    """
    Term coeff(t) * w * (op @ field[source]) in the equation of field[target].

    Attributes:
        target: Index of the field whose time derivative receives the term
        source: Index of the field the operator acts on
        op: Operator
        coeff: Scalar time dependence
        weight: Optional elementwise weight (TtVector on the target grid)
        name: Label used in logs
    """
    target: int
    source: int
    op: TtOperator
    coeff: Callable[[float], complex] = _unit
    weight: Optional[TtVector] = None
    name: str = ""
    _folded: Optional[TtOperator] = field(default=None, repr=False)

    def folded_op(self) -> TtOperator:
        """diag(weight) @ op, computed once."""
        if self.weight is None:
            return self.op
        if self._folded is None:
            self._folded = compose(diag_op(self.weight), self.op)
        return self._folded

    def reversed(self) -> "Coupling":
        return replace(
            self,
            op=reversed_op(self.op),
            weight=None if self.weight is None else reversed_tt(self.weight),
            _folded=None if self._folded is None else reversed_op(self._folded),
        )


@dataclass
class DynamicsModel:
    """
    Coupled fields d u_f / dt = rate_f(fields, applied couplings) + b_f.

    The default rate is linear: the sum of coeff(t) times the (weighted)
    applied couplings of each target. Nonlinear problems override `rate`;
    it only ever sees values of the fields and of the applied operators at
    the same points.
    """
    n_fields: int
    couplings: List[Coupling]
    sources: List[Optional[TtVector]] = field(default_factory=list)
    nonlinear: bool = False
    name: str = ""

    def __post_init__(self):
        if not self.sources:
            self.sources = [None] * self.n_fields
        if len(self.sources) != self.n_fields:
            raise ValueError(f"{len(self.sources)} sources for {self.n_fields} fields")
        for c in self.couplings:
            if not (0 <= c.target < self.n_fields and 0 <= c.source < self.n_fields):
                raise ValueError(f"coupling {c.name!r} refers to a missing field")

    def rate(self, fields: List[np.ndarray], applied: List[np.ndarray], t: float) -> List[np.ndarray]:
        rates: List[np.ndarray] = [np.zeros_like(f) for f in fields]
        for c, value in zip(self.couplings, applied):
            rates[c.target] = rates[c.target] + c.coeff(t) * value
        return rates

    def reversed(self) -> "DynamicsModel":
        """Same dynamics with every train in reversed site order."""
        return replace(
            self,
            couplings=[c.reversed() for c in self.couplings],
            sources=[None if b is None else reversed_tt(b) for b in self.sources],
        )


@dataclass
class DiagnosticsRecord:
    """One row of steps.csv."""
    step: int
    time: float
    flavor: str
    scheme: str
    stepper: str
    r_in: int
    r: int
    n_eval: int
    wall_seconds: float
    err_l2: Optional[float] = None

    def as_row(self) -> Dict:
        return asdict(self)


# ============================================
# STEP AND TRUNCATE
# ============================================

def sat_step(
    states: List[TtVector],
    model: DynamicsModel,
    dt: float,
    t: float,
    eps: float,
    r_max: Optional[int] = None,
    r_min: int = 1,
    step: int = 0,
) -> Tuple[List[TtVector], DiagnosticsRecord]:
    """
    Global Euler step u + dt * (sum_c coeff_c A_c u + b), summed exactly and truncated once.

    Args:
        states: One TtVector per field
        model: Linear dynamics model
        dt: Time step
        t: Current time
        eps: Truncation tolerance
        r_max: Rank cap
        r_min: Rank floor
        step: Step index for the diagnostics record

    Returns:
        (new states, DiagnosticsRecord)
    """
    if model.nonlinear:
        raise ValueError("step-and-truncate needs a linear model")
    start = time.perf_counter()
    rates: List[Optional[TtVector]] = [None] * model.n_fields
    for c in model.couplings:
        term = scale(apply_op(c.folded_op(), states[c.source]), c.coeff(t))
        rates[c.target] = term if rates[c.target] is None else add(rates[c.target], term)
    for f, b in enumerate(model.sources):
        if b is not None:
            rates[f] = b if rates[f] is None else add(rates[f], b)
    # one rate evaluation: every stored entry of the rate trains
    n_eval = sum(sum(core.size for core in r.cores) for r in rates if r is not None)
    sums = [s if r is None else add(s, scale(r, dt)) for s, r in zip(states, rates)]

    r_in = max(s.max_rank for s in sums)
    out = []
    for s in sums:
        new = truncate(s, eps=eps, r_max=r_max, r_min=r_min)
        for core in new.cores:
            if not np.all(np.isfinite(core)):
                raise SolverDivergenceError(f"non-finite state after step {step}")
        out.append(new)

    record = DiagnosticsRecord(
        step=step,
        time=t + dt,
        flavor="SAT",
        scheme="SAT",
        stepper=Method.EULER.value,
        r_in=r_in,
        r=max(s.max_rank for s in out),
        n_eval=n_eval,
        wall_seconds=time.perf_counter() - start,
    )
    logger.debug("SAT step %d: r_in=%d r=%d", step, record.r_in, record.r)
    return out, record
