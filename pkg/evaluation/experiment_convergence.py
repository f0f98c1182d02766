"""
Experiment: Time-Step Convergence of Dynamical Low-Rank Integrators

Measures how the error of the magnetized advection run at a fixed end time
scales with the time step for each decimation scheme and time stepper, and
how a finite truncation tolerance puts a floor under that scaling.

Research Question:
    Does subspace expansion (AP) keep the order of the underlying time
    stepper, and does projector splitting (PS) fall back to second order?

Methodology:
    - Advection at L=5 per dimension, eps=1e-14, Δt swept over one decade
    - Schemes AP and PS, steppers RK4 and CN, flavors G and P
    - Slope of log(err) vs log(Δt) fitted on the monotone prefix
    - Truncation-floor sweep at eps=1e-6, eps_in=1e-7
    - Maxwell comparison of AP-X, AP-G and step-and-truncate at L=7

Expected orders:
    AP-RK4 in [3.5, 4.5]; AP-CN, PS-RK4, PS-CN in [1.7, 2.3]
"""

import sys
import os
import json
from datetime import datetime
from typing import List, Dict, Tuple, Optional
from dataclasses import dataclass, asdict

# Add parent directory for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import config
from harness import PointResult, RunConfig, fit_order, run_point


@dataclass
class ConvergenceResult:
    """One (configuration, Δt, eps) run."""
    label: str
    scheme: str
    stepper: str
    flavor: str
    dt: float
    eps: float
    final_error: Optional[float]
    mean_r_in: float
    mean_r: float
    diverged: bool


@dataclass
class AggregateOrder:
    """Fitted order of one configuration."""
    label: str
    slope: float
    fit_points: int
    flagged: bool
    expected_low: float
    expected_high: float

    @property
    def within_expectation(self) -> bool:
        return self.expected_low <= self.slope <= self.expected_high


DT_VALUES = [0.4, 0.2, 0.1, 0.05]
ORDER_CONFIGS = [
    # (scheme, stepper, expected slope range)
    ("AP", "rk4", (3.5, 4.5)),
    ("AP", "cn", (1.7, 2.3)),
    ("PS", "rk4", (1.7, 2.3)),
    ("PS", "cn", (1.7, 2.3)),
]
ORDER_FLAVORS = ["G", "P"]


def _result(label: str, cfg: RunConfig, res: PointResult) -> ConvergenceResult:
    err = res.summary.get("err_analytic")
    return ConvergenceResult(
        label=label,
        scheme=res.summary["scheme"],
        stepper=cfg.stepper,
        flavor=res.summary["flavor"],
        dt=res.dt,
        eps=res.eps,
        final_error=None if err is None else float(err),
        mean_r_in=res.summary["mean_r_in"],
        mean_r=res.summary["mean_r"],
        diverged=res.diverged,
    )


def run_order_sweep(
    scheme: str,
    stepper: str,
    flavor: str,
    eps: float = 1e-14,
    eps_in: float = 1e-14,
    L: int = config.ADVECTION_L,
    t_final: float = config.ADVECTION_T_FINAL,
    dts: Optional[List[float]] = None,
) -> List[ConvergenceResult]:
    """
    Advection runs over a Δt sweep for one configuration.

    Args:
        scheme: "AP" or "PS"
        stepper: "rk4" or "cn"
        flavor: "G", "X" or "P"
        eps: Final truncation tolerance
        eps_in: Internal truncation tolerance
        L: Bits per dimension
        t_final: End time
        dts: Time steps (DT_VALUES by default)

    Returns:
        One ConvergenceResult per time step
    """
    cfg = RunConfig(
        experiment="advection", scheme=scheme, stepper=stepper, flavor=flavor,
        eps=eps, eps_in=eps_in, L=L, t_final=t_final, quiet=True,
    )
    cfg.validate()
    label = f"{scheme}-{flavor} {stepper}"
    results = []
    for dt in dts or DT_VALUES:
        results.append(_result(label, cfg, run_point(cfg, dt, eps, show_progress=False)))
    return results


def compute_order(results: List[ConvergenceResult], expected: Tuple[float, float]) -> Optional[AggregateOrder]:
    usable = [r for r in results if r.final_error is not None and r.final_error > 0 and not r.diverged]
    if len(usable) < 3:
        return None
    fit = fit_order([r.dt for r in usable], [r.final_error for r in usable])
    return AggregateOrder(
        label=results[0].label,
        slope=fit.slope,
        fit_points=fit.n_used,
        flagged=fit.flagged,
        expected_low=expected[0],
        expected_high=expected[1],
    )


def print_results_table(orders: List[AggregateOrder], results: List[ConvergenceResult]) -> str:
    """Markdown tables of fitted orders and raw errors."""
    lines = []
    lines.append("## Fitted orders\n")
    lines.append("| Configuration | Slope | Points | Floor | Expected | OK |")
    lines.append("|---------------|-------|--------|-------|----------|----|")
    for o in orders:
        lines.append(
            f"| {o.label} | {o.slope:.2f} | {o.fit_points} | {'yes' if o.flagged else 'no'} "
            f"| [{o.expected_low}, {o.expected_high}] | {'✓' if o.within_expectation else '✗'} |"
        )
    lines.append("\n## Errors\n")
    lines.append("| Configuration | Δt | eps | L2 error | mean r_in | mean r |")
    lines.append("|---------------|----|-----|----------|-----------|--------|")
    for r in results:
        err = "diverged" if r.diverged else (f"{r.final_error:.3e}" if r.final_error is not None else "-")
        lines.append(f"| {r.label} | {r.dt:g} | {r.eps:.0e} | {err} | {r.mean_r_in:.1f} | {r.mean_r:.1f} |")
    return "\n".join(lines)


def run_truncation_floor(L: int = config.ADVECTION_L, t_final: float = config.ADVECTION_T_FINAL) -> Dict:
    """AP-G RK4 sweep at eps=1e-6: the smallest Δt should not give the smallest error."""
    results = run_order_sweep("AP", "rk4", "G", eps=1e-6, eps_in=1e-7, L=L, t_final=t_final)
    errors = [r.final_error for r in results if r.final_error is not None]
    floor_seen = bool(errors) and errors[-1] >= 2.0 * min(errors)
    return {"results": [asdict(r) for r in results], "floor_seen": floor_seen}


def run_maxwell_comparison(L: int = 7, eps: float = 1e-4) -> Dict:
    """AP-X against AP-G and step-and-truncate on the dielectric cavity."""
    rows = {}
    for label, overrides in [
        ("AP-X", {"flavor": "X"}),
        ("AP-G", {"flavor": "G"}),
        ("SAT", {"integrator": "sat"}),
    ]:
        cfg = RunConfig(experiment="maxwell", scheme="AP", stepper="euler", L=L, eps=eps, quiet=True, **overrides)
        cfg.validate()
        print(f"  {label}: ", end="", flush=True)
        res = run_point(cfg, None, eps, show_progress=False)
        print("✗ diverged" if res.diverged else "✓")
        rows[label] = {
            "diverged": res.diverged,
            "rel_err_dense": res.summary.get("rel_err_dense"),
            "max_abs_ez": res.summary.get("max_abs_ez"),
            "max_abs_ez_initial": res.summary.get("max_abs_ez_initial"),
            "mean_r_in": res.summary["mean_r_in"],
        }
    return rows


def run_full_experiment(output_dir: Optional[str] = None, L: int = config.ADVECTION_L,
                        t_final: float = config.ADVECTION_T_FINAL) -> Tuple[List[ConvergenceResult], List[AggregateOrder]]:
    """
    Run the order sweeps, the truncation-floor sweep and the Maxwell comparison.

    Args:
        output_dir: Directory for the JSON and markdown reports (defaults to this directory)
        L: Advection bits per dimension
        t_final: Advection end time

    Returns:
        Tuple of (all_results, orders)
    """
    if output_dir is None:
        output_dir = os.path.dirname(os.path.abspath(__file__))

    print("=" * 70)
    print("EXPERIMENT: Time-Step Convergence of Dynamical Low-Rank Integrators")
    print("=" * 70)
    print(f"Start time: {datetime.now().isoformat()}")
    print(f"Δt values: {DT_VALUES}")
    print(f"L={L} per dimension, T={t_final}")
    print()

    all_results = []
    orders = []
    for scheme, stepper, expected in ORDER_CONFIGS:
        for flavor in ORDER_FLAVORS:
            print(f"--- {scheme}-{flavor} {stepper} ---")
            results = run_order_sweep(scheme, stepper, flavor, L=L, t_final=t_final)
            all_results.extend(results)
            order = compute_order(results, expected)
            if order is None:
                print("  ✗ not enough finite errors for a fit")
                continue
            orders.append(order)
            mark = "✓" if order.within_expectation else "✗"
            print(f"  {mark} slope {order.slope:.2f} (expected {expected[0]}-{expected[1]})")

    print("\n--- Truncation floor (eps=1e-6) ---")
    floor = run_truncation_floor(L=L, t_final=t_final)
    print(f"  {'✓' if floor['floor_seen'] else '✗'} floor visible at the smallest Δt")

    print("\n--- Maxwell cavity comparison ---")
    maxwell = run_maxwell_comparison()

    report = print_results_table(orders, all_results)
    print("\n" + report)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    results_file = os.path.join(output_dir, f"convergence_results_{timestamp}.json")
    with open(results_file, "w") as f:
        json.dump({
            "timestamp": timestamp,
            "dt_values": DT_VALUES,
            "results": [asdict(r) for r in all_results],
            "orders": [asdict(o) for o in orders],
            "truncation_floor": floor,
            "maxwell": maxwell,
        }, f, indent=2)
    print(f"\n✅ Raw results saved to: {results_file}")

    report_file = os.path.join(output_dir, f"convergence_report_{timestamp}.md")
    with open(report_file, "w") as f:
        f.write("# Experiment Report: Time-Step Convergence\n\n")
        f.write(f"**Date**: {datetime.now().isoformat()}\n\n")
        f.write(report)
    print(f"✅ Report saved to: {report_file}")

    return all_results, orders


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(
        description="Experiment: Time-Step Convergence of Dynamical Low-Rank Integrators"
    )
    parser.add_argument(
        "--run",
        action="store_true",
        help="Run the full experiment suite"
    )
    parser.add_argument("--L", type=int, default=config.ADVECTION_L, help="Advection bits per dimension")
    parser.add_argument("--t-final", type=float, default=config.ADVECTION_T_FINAL, help="Advection end time")
    parser.add_argument("--output", "-o", type=str, default=None, help="Output directory for results")

    args = parser.parse_args()

    if args.run:
        run_full_experiment(args.output, L=args.L, t_final=args.t_final)
    else:
        parser.print_help()
