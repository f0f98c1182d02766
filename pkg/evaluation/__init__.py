"""
Evaluation Module for the dynamical low-rank QTT experiments

This module scripts the longer experiment suites:
- Time-step convergence orders per scheme, stepper and flavor
- Truncation floor at a finite tolerance
- Maxwell cavity stability of AP-X against AP-G and step-and-truncate

Use these experiments to:
1. Check the order of accuracy of a new integrator variant
2. Tune eps / eps_in for a target error
3. Produce markdown reports of a sweep
"""

from .experiment_convergence import (
    run_full_experiment,
    run_order_sweep,
    compute_order,
    DT_VALUES,
    ORDER_CONFIGS,
)

__all__ = [
    "run_full_experiment",
    "run_order_sweep",
    "compute_order",
    "DT_VALUES",
    "ORDER_CONFIGS",
]
