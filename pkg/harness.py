"""
Command-line front end for the low-rank experiments.

Runs one experiment (or a sweep over time steps and tolerances), counts
right-hand-side evaluations and writes the diagnostics as CSV:

    <out>/steps.csv        one DiagnosticsRecord per time step and sweep point
    <out>/summary.csv      one row per sweep point (final error, mean ranks, order fit)
    <out>/final_state.txt  TT dump of the first field of the last sweep point

Usage:
    python harness.py burgers --ic shock_propagation --L 9 --eps 1e-4 --flavor X --scheme AP --stepper euler
    python harness.py advection --sweep-dt 0.4,0.2,0.1,0.05 --eps 1e-14 --flavor G --scheme AP --stepper rk4
    python harness.py maxwell --L 7 --flavor X --integrator sat
    python harness.py unit-bench --bench-count 200

Exit codes: 0 success, 2 configuration error, 3 solver divergence.
"""

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from tqdm import tqdm

import config
from dlra import Direction, Flavor, Scheme, SweepPlan, dlr_step, project_vector, prepare
from problems import (
    AdvectionSetup,
    BurgersIC,
    BurgersSetup,
    DenseLimitError,
    MaxwellSetup,
    MAXWELL_FIELDS,
    advection_initial,
    advection_model,
    analytic_distribution_error,
    analytic_drift,
    burgers_initial,
    burgers_model,
    dense_problem,
    dense_reference,
    drift_from_state,
    maxwell_energy,
    maxwell_initial,
    maxwell_model,
    shock_position,
    step_sizes,
    total_mass,
    tt_to_grid,
    variance_from_state,
)
from matalg import DegenerateSelectionError, NonFiniteError, SolverBreakdownError
from quantize import grid_points
from stepper import DynamicsModel, Method, ReducedProblem, SolverDivergenceError, integrate, sat_step
from ttcore import Form, TtVector, canonicalize, dump_tt, random_tt, verify_canonical

logger = logging.getLogger(__name__)

EXPERIMENTS = tuple(config.EXPERIMENTS)
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

# failures inside a step that end the run but keep the rows written so far
DIVERGENCE_ERRORS = (
    SolverDivergenceError,
    NonFiniteError,
    SolverBreakdownError,
    DegenerateSelectionError,
    np.linalg.LinAlgError,
)


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Everything a run needs; built from defaults, a key=value file and flags."""
    experiment: str = "burgers"
    flavor: str = "X"
    scheme: str = "AP"
    stepper: str = "euler"
    integrator: str = "dlr"
    L: Optional[int] = None
    eps: float = config.DEFAULT_EPS
    eps_in: float = config.DEFAULT_EPS_IN
    r_max: Optional[int] = config.DEFAULT_R_MAX
    r_min: int = config.DEFAULT_R_MIN
    dt: Optional[float] = None
    t_final: Optional[float] = None
    ic: str = BurgersIC.SHOCK_PROPAGATION.value
    seed: int = 0
    out: str = config.OUTPUT_PATH
    sweep_dt: List[float] = field(default_factory=list)
    sweep_eps: List[float] = field(default_factory=list)
    two_site: bool = False
    oversample: bool = False
    single_sweep: bool = False
    rk4_targets: str = "stages"
    p_blocking: str = "sampled"
    reference: str = "analytic"
    workers: int = 1
    quiet: bool = False
    bench_count: int = 20

    def validate(self) -> None:
        """
        Raises:
            ConfigError: On the first invalid setting
        """
        choices = {
            "experiment": EXPERIMENTS,
            "flavor": tuple(f.value for f in Flavor),
            "scheme": tuple(s.value for s in Scheme),
            "stepper": tuple(m.value for m in Method),
            "integrator": ("dlr", "sat"),
            "ic": tuple(ic.value for ic in BurgersIC),
            "rk4_targets": ("stages", "thirds"),
            "p_blocking": ("sampled", "oblique"),
            "reference": ("analytic", "dense"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name}={getattr(self, name)!r} is not one of {', '.join(allowed)}")
        for name in ("dt", "t_final"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.L is not None and self.L < 1:
            raise ConfigError(f"L must be positive, got {self.L}")
        if self.eps < 0 or self.eps_in < 0:
            raise ConfigError("eps and eps_in must be non-negative")
        if self.r_min < 1:
            raise ConfigError(f"r_min must be at least 1, got {self.r_min}")
        if self.r_max is not None and self.r_max < self.r_min:
            raise ConfigError(f"r_max={self.r_max} is below r_min={self.r_min}")
        if any(v <= 0 for v in self.sweep_dt) or any(v < 0 for v in self.sweep_eps):
            raise ConfigError("sweep values must be positive")
        if self.workers < 1 or self.bench_count < 1:
            raise ConfigError("workers and bench-count must be at least 1")
        if self.two_site and self.scheme != Scheme.PS.value:
            raise ConfigError("--two-site requires --scheme PS")
        if self.experiment == "burgers":
            if self.integrator == "sat":
                raise ConfigError("step-and-truncate needs a linear model; burgers is nonlinear")
            if self.stepper == Method.CN.value:
                raise ConfigError("Crank-Nicolson needs a linear model; burgers is nonlinear")
            if self.flavor == Flavor.G.value:
                raise ConfigError("flavor G cannot project the nonlinear burgers update; use X or P")
        if self.integrator == "sat" and self.stepper != Method.EULER.value:
            raise ConfigError("step-and-truncate is an Euler scheme; use --stepper euler")
        if self.eps_in > self.eps:
            logger.warning("eps_in=%.1e exceeds eps=%.1e", self.eps_in, self.eps)

    def plan(self, eps: Optional[float] = None, r_min: Optional[int] = None) -> SweepPlan:
        return SweepPlan(
            flavor=Flavor(self.flavor),
            scheme=Scheme(self.scheme),
            stepper=Method(self.stepper),
            eps=self.eps if eps is None else eps,
            eps_in=self.eps_in,
            r_max=self.r_max,
            r_min=self.r_min if r_min is None else r_min,
            two_site=self.two_site,
            oversample=self.oversample,
            direction=Direction.LEFT_TO_RIGHT,
            symmetric=not self.single_sweep,
            rk4_targets=self.rk4_targets,
            p_blocking=self.p_blocking,
        )


# ============================================
# CONFIGURATION PARSING
# ============================================

_FLOATS = {"eps", "eps_in", "dt", "t_final"}
_INTS = {"L", "r_max", "r_min", "seed", "workers", "bench_count"}
_BOOLS = {"two_site", "oversample", "single_sweep", "quiet"}
_LISTS = {"sweep_dt", "sweep_eps"}


def parse_float_list(text: str) -> List[float]:
    """'0.4,0.2,0.1' -> [0.4, 0.2, 0.1]; empty text gives an empty list."""
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse list {text!r}: {e}")


def _coerce(name: str, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if name in _LISTS:
            return parse_float_list(value)
        if name in _BOOLS:
            return value.strip().lower() in ("1", "true", "yes", "on")
        if name in _FLOATS:
            return float(value)
        if name in _INTS:
            return None if value.strip().lower() == "none" else int(value)
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {value!r} ({e})")
    return value


def load_config_file(path: str) -> Dict:
    """key=value file to RunConfig keyword arguments (dashes or underscores in keys)."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in dotenv_values(path).items():
        name = key.strip().replace("-", "_")
        if name.lower() in {k.lower() for k in known}:
            name = next(k for k in known if k.lower() == name.lower())
        else:
            raise ConfigError(f"unknown config key {key!r} in {path}")
        out[name] = _coerce(name, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Dynamical low-rank QTT experiments",
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("experiment", choices=EXPERIMENTS, help="Experiment to run")
    parser.add_argument("--config", help="key=value file; flags override its values")
    parser.add_argument("--L", type=int, help="Bits per dimension")
    parser.add_argument("--eps", type=float, help="Final truncation tolerance")
    parser.add_argument("--eps-in", type=float, dest="eps_in", help="Internal truncation tolerance")
    parser.add_argument("--flavor", choices=[f.value for f in Flavor])
    parser.add_argument("--scheme", choices=[s.value for s in Scheme])
    parser.add_argument("--stepper", choices=[m.value for m in Method])
    parser.add_argument("--integrator", choices=["dlr", "sat"], help="Sweep (dlr) or step-and-truncate (sat)")
    parser.add_argument("--dt", type=float, help="Time step")
    parser.add_argument("--t-final", type=float, dest="t_final")
    parser.add_argument("--r-max", type=int, dest="r_max")
    parser.add_argument("--r-min", type=int, dest="r_min")
    parser.add_argument("--two-site", action="store_true", dest="two_site")
    parser.add_argument("--oversample", action="store_true")
    parser.add_argument("--single-sweep", action="store_true", dest="single_sweep",
                        help="PS without the symmetric second half step")
    parser.add_argument("--rk4-targets", choices=["stages", "thirds"], dest="rk4_targets")
    parser.add_argument("--p-blocking", choices=["sampled", "oblique"], dest="p_blocking")
    parser.add_argument("--ic", choices=[ic.value for ic in BurgersIC], help="Burgers initial condition")
    parser.add_argument("--reference", choices=["analytic", "dense"], help="Advection error reference")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--sweep-dt", type=parse_float_list, dest="sweep_dt")
    parser.add_argument("--sweep-eps", type=parse_float_list, dest="sweep_eps")
    parser.add_argument("--workers", type=int, help="Threads for independent sweep points")
    parser.add_argument("--bench-count", type=int, dest="bench_count")
    parser.add_argument("--quiet", action="store_true", help="No progress bars")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return parser


def config_from_args(argv: Optional[Sequence[str]] = None) -> Tuple[RunConfig, bool]:
    """Defaults < config file < flags. Returns (config, verbose)."""
    args = vars(build_parser().parse_args(argv))
    verbose = args.pop("verbose", False)
    values = {}
    path = args.pop("config", None)
    if path:
        values.update(load_config_file(path))
    values.update(args)
    try:
        cfg = RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e))
    cfg.validate()
    return cfg, verbose


# ============================================
# EXPERIMENTS
# ============================================

@dataclass
class Experiment:
    """A ready-to-step experiment instance."""
    name: str
    setup: object
    model: DynamicsModel
    states: List[TtVector]
    dt: float
    t_final: float
    field_names: Tuple[str, ...]
    r_min: int
    error: Callable[[List[TtVector], float], Optional[float]]
    summary: Callable[[List[TtVector], float], Dict]
    on_step: Callable[[float, float], None] = lambda t, dt: None


class DenseCompanion:
    """Dense run of the same semi-discretization, stepped alongside the low-rank one."""

    def __init__(self, problem: str, setup, method: Method):
        rhs, values, linear = dense_problem(problem, setup)
        self.shape = values[0].shape
        self.n = values[0].size
        self.n_fields = len(values)
        self.method = method

        def apply(y: np.ndarray, t: float) -> np.ndarray:
            return np.concatenate([r.reshape(-1) for r in rhs(self.unpack(y), t)])

        self.rp = ReducedProblem(apply=apply, is_linear=linear)
        self.y = np.concatenate([v.reshape(-1) for v in values])

    def unpack(self, y: np.ndarray) -> List[np.ndarray]:
        return [y[k * self.n:(k + 1) * self.n].reshape(self.shape) for k in range(self.n_fields)]

    def step(self, t: float, dt: float) -> None:
        self.y, _ = integrate(self.method, self.rp, self.y, t, dt)

    @property
    def fields(self) -> List[np.ndarray]:
        return self.unpack(self.y)


def _l2(diff: np.ndarray, cell: float) -> float:
    return float(np.sqrt(cell * np.sum(np.abs(diff) ** 2)))


def _companion(problem: str, setup, method: Method) -> Optional[DenseCompanion]:
    if setup.grid.size > config.DENSE_POINT_LIMIT:
        logger.warning("%s grid of %d points is beyond the dense limit; no step errors", problem, setup.grid.size)
        return None
    return DenseCompanion(problem, setup, method)


def build_burgers(cfg: RunConfig, dt: Optional[float]) -> Experiment:
    ic = BurgersIC(cfg.ic)
    setup = BurgersSetup(L=cfg.L or config.BURGERS_L, ic=ic, t_final=cfg.t_final)
    r_min = max(cfg.r_min, config.BURGERS_MIN_RANK)
    dense = _companion("burgers", setup, Method.EULER)
    x = grid_points(setup.grid)[0]

    def error(states, t):
        if dense is None:
            return None
        return _l2(tt_to_grid(states[0], setup.grid) - dense.fields[0], setup.dx)

    def summary(states, t):
        u = tt_to_grid(states[0], setup.grid)
        row = {"mass": total_mass(u, setup.dx), "shock_position": shock_position(u, x)}
        if dense is not None:
            ref = dense.fields[0]
            row["rel_err_dense"] = _l2(u - ref, setup.dx) / max(_l2(ref, setup.dx), 1e-300)
        return row

    return Experiment(
        name="burgers", setup=setup, model=burgers_model(setup), states=burgers_initial(setup),
        dt=dt or cfg.dt or setup.dt, t_final=setup.t_final, field_names=("u",), r_min=r_min,
        error=error, summary=summary,
        on_step=(lambda t, h: dense.step(t, h)) if dense is not None else (lambda t, h: None),
    )


def build_maxwell(cfg: RunConfig, dt: Optional[float]) -> Experiment:
    setup = MaxwellSetup(L=cfg.L or config.MAXWELL_L, t_final=cfg.t_final or config.MAXWELL_T_FINAL)
    method = Method(cfg.stepper)
    dense = _companion("maxwell", setup, method)
    cell = setup.dx * setup.dy
    initial = maxwell_initial(setup)
    ez_max0 = float(np.max(np.abs(tt_to_grid(initial[0], setup.grid))))

    def error(states, t):
        if dense is None:
            return None
        diffs = [tt_to_grid(s, setup.grid) - ref for s, ref in zip(states, dense.fields)]
        return float(np.sqrt(sum(_l2(d, cell) ** 2 for d in diffs)))

    def summary(states, t):
        grids = [tt_to_grid(s, setup.grid) for s in states]
        row = {
            "max_abs_ez": float(np.max(np.abs(grids[0]))),
            "max_abs_ez_initial": ez_max0,
            "energy": maxwell_energy(grids, setup),
        }
        if dense is not None:
            ref_norm = np.sqrt(sum(_l2(r, cell) ** 2 for r in dense.fields))
            row["rel_err_dense"] = (error(states, t) or 0.0) / max(ref_norm, 1e-300)
        return row

    return Experiment(
        name="maxwell", setup=setup, model=maxwell_model(setup), states=initial,
        dt=dt or cfg.dt or setup.dt, t_final=setup.t_final, field_names=MAXWELL_FIELDS, r_min=cfg.r_min,
        error=error, summary=summary,
        on_step=(lambda t, h: dense.step(t, h)) if dense is not None else (lambda t, h: None),
    )


def advection_reference(setup: AdvectionSetup, dt: float) -> np.ndarray:
    """Final modes of a fine-step dense RK4 run."""
    fine = dense_reference("advection", setup, dt=dt, t_final=setup.t_final, method=Method.RK4)
    return fine.final[0]


def build_advection(cfg: RunConfig, dt: Optional[float], reference: Optional[np.ndarray] = None) -> Experiment:
    setup = AdvectionSetup(L=cfg.L or config.ADVECTION_L, t_final=cfg.t_final or config.ADVECTION_T_FINAL)
    if cfg.dt:
        setup.dt = cfg.dt
    N = setup.grid.n_points

    def error(states, t):
        if cfg.reference == "dense":
            return None
        return analytic_distribution_error(states[0], t, setup)

    def summary(states, t):
        u_x, u_y = drift_from_state(states[0], setup)
        a_x, a_y = analytic_drift(t, setup)
        row = {
            "err_analytic": analytic_distribution_error(states[0], t, setup),
            "drift_x": u_x,
            "drift_y": u_y,
            "drift_err": float(np.hypot(u_x - a_x, u_y - a_y)),
            "variance": variance_from_state(states[0], setup),
        }
        if reference is not None:
            diff = tt_to_grid(states[0], setup.grid) - reference
            row["err_dense"] = float(np.sqrt(setup.dv ** 2 / N ** 2 * np.sum(np.abs(diff) ** 2)))
        return row

    return Experiment(
        name="advection", setup=setup, model=advection_model(setup), states=advection_initial(setup),
        dt=dt or setup.dt, t_final=setup.t_final, field_names=("f",), r_min=cfg.r_min,
        error=error, summary=summary,
    )


def build_experiment(cfg: RunConfig, dt: Optional[float] = None, reference: Optional[np.ndarray] = None) -> Experiment:
    if cfg.experiment == "burgers":
        return build_burgers(cfg, dt)
    if cfg.experiment == "maxwell":
        return build_maxwell(cfg, dt)
    if cfg.experiment == "advection":
        return build_advection(cfg, dt, reference)
    raise ConfigError(f"no time-stepping experiment called {cfg.experiment!r}")


# ============================================
# RUNS
# ============================================

@dataclass
class PointResult:
    """Rows and final state of one sweep point."""
    dt: float
    eps: float
    rows: List[Dict]
    summary: Dict
    states: List[TtVector]
    field_names: Tuple[str, ...]
    diverged: bool = False


def run_point(cfg: RunConfig, dt: Optional[float], eps: float,
              reference: Optional[np.ndarray] = None, show_progress: bool = True) -> PointResult:
    """Integrate one experiment to t_final, one DiagnosticsRecord per step."""
    exp = build_experiment(cfg, dt, reference)
    plan = cfg.plan(eps=eps, r_min=exp.r_min)
    states = exp.states
    rows: List[Dict] = []
    t = 0.0
    diverged = False
    steps = step_sizes(exp.dt, exp.t_final)
    label = f"{exp.name} dt={exp.dt:.3g} eps={eps:.0e}"
    for k, h in enumerate(tqdm(steps, desc=label, disable=cfg.quiet or not show_progress)):
        try:
            if cfg.integrator == "sat":
                states, record = sat_step(states, exp.model, h, t, eps=eps, r_max=cfg.r_max,
                                          r_min=plan.r_min, step=k)
            else:
                states, record = dlr_step(states, exp.model, h, t, plan, step=k)
        except DIVERGENCE_ERRORS as e:
            logger.error("%s diverged at step %d: %s: %s", label, k, type(e).__name__, e)
            diverged = True
            break
        exp.on_step(t, h)
        t += h
        record.err_l2 = exp.error(states, t)
        if cfg.integrator == "sat":
            record.scheme = "SAT"
        rows.append({**record.as_row(), "dt": exp.dt, "eps": eps})

    summary = {
        "experiment": exp.name,
        "integrator": cfg.integrator,
        "flavor": cfg.flavor if cfg.integrator == "dlr" else "SAT",
        "scheme": cfg.scheme if cfg.integrator == "dlr" else "SAT",
        "stepper": cfg.stepper,
        "dt": exp.dt,
        "eps": eps,
        "t_reached": t,
        "n_steps": len(rows),
        "diverged": diverged,
        "mean_r_in": float(np.mean([r["r_in"] for r in rows])) if rows else float("nan"),
        "mean_r": float(np.mean([r["r"] for r in rows])) if rows else float("nan"),
        "mean_n_eval": float(np.mean([r["n_eval"] for r in rows])) if rows else float("nan"),
        "final_err_l2": rows[-1]["err_l2"] if rows else None,
    }
    if not diverged:
        summary.update(exp.summary(states, t))
    return PointResult(dt=exp.dt, eps=eps, rows=rows, summary=summary, states=states,
                       field_names=exp.field_names, diverged=diverged)


@dataclass
class FitResult:
    """Least-squares order fit on the monotone prefix of an error curve."""
    slope: float
    n_used: int
    flagged: bool


def fit_order(dts: Sequence[float], errs: Sequence[float]) -> FitResult:
    """
    Slope of log(err) against log(dt).

    Points are taken from the largest dt down while the error keeps
    decreasing; a truncation floor ends the prefix and flags the fit.

    Raises:
        ValueError: Fewer than three points or non-positive values
    """
    dts = np.asarray(dts, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if dts.size != errs.size or dts.size < 3:
        raise ValueError("an order fit needs at least three (dt, err) pairs")
    if np.any(dts <= 0) or np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("dt and error values must be positive and finite")
    order = np.argsort(-dts)
    dts, errs = dts[order], errs[order]
    n_used = 1
    while n_used < errs.size and errs[n_used] < errs[n_used - 1]:
        n_used += 1
    n_used = max(n_used, 2)
    slope = np.polyfit(np.log(dts[:n_used]), np.log(errs[:n_used]), 1)[0]
    return FitResult(slope=float(slope), n_used=int(n_used), flagged=bool(n_used < errs.size))


def _final_error(summary: Dict) -> Optional[float]:
    for key in ("err_dense", "err_analytic", "rel_err_dense", "final_err_l2"):
        value = summary.get(key)
        if value is not None and np.isfinite(value):
            return float(value)
    return None


def sweep_points(cfg: RunConfig) -> List[Tuple[Optional[float], float]]:
    dts = cfg.sweep_dt or [cfg.dt]
    epss = cfg.sweep_eps or [cfg.eps]
    return list(itertools.product(dts, epss))


def write_outputs(cfg: RunConfig, results: List[PointResult]) -> None:
    os.makedirs(cfg.out, exist_ok=True)
    rows = []
    for point, res in enumerate(results):
        rows.extend({"point": point, **row} for row in res.rows)
    pd.DataFrame(rows).to_csv(os.path.join(cfg.out, config.STEPS_FILE), index=False)

    summary = pd.DataFrame([{"point": k, **r.summary} for k, r in enumerate(results)])
    if len(cfg.sweep_dt) >= 3:
        summary["slope"] = np.nan
        summary["fit_points"] = 0
        summary["fit_flagged"] = False
        for eps, group in summary.groupby("eps"):
            errs = [_final_error(results[k].summary) for k in group.index]
            if any(e is None or e <= 0 for e in errs):
                logger.warning("no order fit at eps=%.1e: missing errors", eps)
                continue
            fit = fit_order(group["dt"].tolist(), errs)
            summary.loc[group.index, "slope"] = fit.slope
            summary.loc[group.index, "fit_points"] = fit.n_used
            summary.loc[group.index, "fit_flagged"] = fit.flagged
    summary.to_csv(os.path.join(cfg.out, config.SUMMARY_FILE), index=False)

    if results and results[-1].states:
        last = results[-1]
        with open(os.path.join(cfg.out, config.FINAL_STATE_FILE), "w") as f:
            f.write(dump_tt(last.states[0]))
        for name, state in zip(last.field_names[1:], last.states[1:]):
            with open(os.path.join(cfg.out, f"final_state_{name}.txt"), "w") as f:
                f.write(dump_tt(state))


def run(cfg: RunConfig) -> int:
    """
    Execute a configuration and write its CSV files.

    Returns:
        Exit status: 0, or 3 when a point diverged (rows up to the failure are written)
    """
    if cfg.experiment == "unit-bench":
        return run_bench(cfg)

    reference = None
    if cfg.experiment == "advection" and cfg.reference == "dense":
        base = build_advection(cfg, None)
        finest = min(cfg.sweep_dt or [base.dt])
        try:
            reference = advection_reference(base.setup, finest / 8.0)
        except DenseLimitError as e:
            raise ConfigError(str(e))

    points = sweep_points(cfg)
    print("=" * 60)
    print(f"{cfg.experiment}: {len(points)} point(s), integrator={cfg.integrator}, "
          f"{cfg.scheme}-{cfg.flavor} {cfg.stepper}")
    print("=" * 60)

    if cfg.workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(
                lambda p: run_point(cfg, p[0], p[1], reference, show_progress=False), points
            ))
    else:
        results = [run_point(cfg, dt, eps, reference) for dt, eps in points]

    write_outputs(cfg, results)
    for res in results:
        status = "✗ diverged" if res.diverged else "✓"
        print(f"  {status} dt={res.dt:.4g} eps={res.eps:.1e} steps={len(res.rows)} "
              f"err={_final_error(res.summary)}")
    print(f"\n✅ Results written to: {cfg.out}")
    return EXIT_DIVERGED if any(r.diverged for r in results) else EXIT_OK


# ============================================
# UNIT BENCH
# ============================================

def projector_idempotence(x: TtVector, target: TtVector, flavor: Flavor) -> float:
    """||P(P(T)) - P(T)|| / ||T|| for the center-site projector of `flavor` on the manifold of x."""
    manifold = prepare(x, flavor)
    once = manifold.with_cores(list(manifold.cores))
    once.cores[0] = project_vector(target, manifold, 0, flavor)
    twice = manifold.with_cores(list(manifold.cores))
    twice.cores[0] = project_vector(once, manifold, 0, flavor)
    return float(np.linalg.norm(twice.dense() - once.dense()) / max(target.norm(), 1e-300))


def run_bench(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in tqdm(range(cfg.bench_count), desc="unit-bench", disable=cfg.quiet):
        L = int(rng.integers(2, 9))
        rank = int(rng.integers(1, 7))
        x = random_tt([2] * L, rank, rng)
        target = random_tt([2] * L, rank, rng)
        center = int(rng.integers(0, L))
        row = {"index": k, "L": L, "rank": rank, "center": center}
        for form in (Form.ORTHONORMAL, Form.INTERPOLATIVE):
            report = verify_canonical(canonicalize(x, center, form))
            row[f"{form.value}_residual"] = report.max_residual
            row[f"{form.value}_nested"] = report.nested
        for flavor in (Flavor.G, Flavor.X):
            row[f"idempotence_{flavor.value}"] = projector_idempotence(x, target, flavor)
        rows.append(row)

    os.makedirs(cfg.out, exist_ok=True)
    bench = pd.DataFrame(rows)
    bench.to_csv(os.path.join(cfg.out, config.BENCH_FILE), index=False)
    summary = {"experiment": "unit-bench", "count": len(rows), "seed": cfg.seed}
    for column in bench.columns:
        if column.endswith("_residual") or column.startswith("idempotence_"):
            summary[f"max_{column}"] = float(bench[column].max())
    pd.DataFrame([summary]).to_csv(os.path.join(cfg.out, config.SUMMARY_FILE), index=False)

    print("=" * 60)
    print(f"unit-bench: {len(rows)} random trains")
    print("=" * 60)
    for key, value in summary.items():
        if key.startswith("max_"):
            print(f"  {key}: {value:.3e}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg, verbose = config_from_args(argv)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(cfg)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
