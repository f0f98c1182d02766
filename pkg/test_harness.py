import os

import numpy as np
import pandas as pd
import pytest

import config
import harness
from dlra import Flavor, Scheme
from harness import (
    ConfigError,
    PointResult,
    RunConfig,
    config_from_args,
    fit_order,
    load_config_file,
    main,
    parse_float_list,
    projector_idempotence,
    run_point,
    sweep_points,
    write_outputs,
)
from matalg import DegenerateSelectionError, NonFiniteError, SolverBreakdownError
from ttcore import load_tt, random_tt


# ============================================
# Order fit
# ============================================

def test_fit_order_second_order():
    dts = [0.4, 0.2, 0.1, 0.05]
    errs = [0.16, 0.04, 0.01, 0.0025]
    fit = fit_order(dts, errs)
    assert fit.slope == pytest.approx(2.0)
    assert fit.n_used == 4
    assert not fit.flagged


def test_fit_order_stops_at_truncation_floor():
    fit = fit_order([0.4, 0.2, 0.1, 0.05], [0.16, 0.04, 0.01, 0.01])
    assert fit.n_used == 3
    assert fit.flagged
    assert fit.slope == pytest.approx(2.0)


def test_fit_order_sorts_by_step_size():
    fit = fit_order([0.1, 0.4, 0.2], [1e-3, 6.4e-2, 8e-3])
    assert fit.slope == pytest.approx(3.0)
    assert fit.n_used == 3


def test_fit_order_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_order([0.2, 0.1], [0.04, 0.01])
    with pytest.raises(ValueError):
        fit_order([0.4, 0.2, 0.1], [0.16, 0.0, 0.01])


# ============================================
# Configuration
# ============================================

def test_parse_float_list():
    assert parse_float_list("0.4,0.2, 0.1") == [0.4, 0.2, 0.1]
    assert parse_float_list("") == []
    with pytest.raises(ConfigError):
        parse_float_list("0.1,fast")


def test_flags_are_parsed():
    cfg, verbose = config_from_args([
        "advection", "--sweep-dt", "0.4,0.2,0.1", "--eps", "1e-14",
        "--flavor", "G", "--stepper", "rk4", "-v",
    ])
    assert cfg.experiment == "advection"
    assert cfg.sweep_dt == [0.4, 0.2, 0.1]
    assert cfg.eps == 1e-14
    assert cfg.flavor == "G" and cfg.stepper == "rk4"
    assert verbose


def test_config_file_with_flag_precedence(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("L=4\nflavor=P\nsweep_dt=0.2,0.1\ntwo_site=false\n")
    cfg, verbose = config_from_args(["maxwell", "--config", str(path), "--L", "6"])
    assert cfg.L == 6
    assert cfg.flavor == "P"
    assert cfg.sweep_dt == [0.2, 0.1]
    assert cfg.two_site is False
    assert not verbose


def test_config_file_errors(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("colour=blue\n")
    with pytest.raises(ConfigError):
        load_config_file(str(path))
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / "missing.env"))


@pytest.mark.parametrize("overrides", [
    {"experiment": "burgers", "integrator": "sat"},
    {"experiment": "burgers", "flavor": "G"},
    {"experiment": "burgers", "stepper": "cn"},
    {"experiment": "maxwell", "two_site": True},
    {"experiment": "maxwell", "integrator": "sat", "stepper": "rk4"},
    {"experiment": "maxwell", "r_min": 8, "r_max": 4},
    {"experiment": "maxwell", "dt": -0.1},
])
def test_invalid_configurations(overrides):
    with pytest.raises(ConfigError):
        RunConfig(**overrides).validate()


@pytest.mark.parametrize("argv", [
    ["burgers", "--integrator", "sat"],
    ["burgers", "--flavor", "G"],
    ["maxwell", "--two-site"],
])
def test_main_reports_configuration_errors(argv):
    assert main(argv) == 2


def test_plan_and_sweep_points():
    cfg = RunConfig(experiment="maxwell", flavor="P", scheme="PS", two_site=True, single_sweep=True)
    cfg.validate()
    plan = cfg.plan(eps=1e-6)
    assert plan.flavor is Flavor.P and plan.scheme is Scheme.PS
    assert plan.two_site and not plan.symmetric
    assert plan.eps == 1e-6

    cfg = RunConfig(sweep_dt=[0.2, 0.1], sweep_eps=[1e-4, 1e-6])
    assert sweep_points(cfg) == [(0.2, 1e-4), (0.2, 1e-6), (0.1, 1e-4), (0.1, 1e-6)]
    assert sweep_points(RunConfig()) == [(None, config.DEFAULT_EPS)]


# ============================================
# Outputs
# ============================================

def test_write_outputs_fits_the_order(tmp_path):
    cfg = RunConfig(experiment="advection", sweep_dt=[0.4, 0.2, 0.1], out=str(tmp_path))
    results = [
        PointResult(dt=dt, eps=1e-8, rows=[{"step": 0, "r": 2}],
                    summary={"dt": dt, "eps": 1e-8, "err_analytic": err}, states=[], field_names=("f",))
        for dt, err in [(0.4, 0.16), (0.2, 0.04), (0.1, 0.01)]
    ]
    write_outputs(cfg, results)
    summary = pd.read_csv(tmp_path / config.SUMMARY_FILE)
    assert summary["slope"].tolist() == pytest.approx([2.0] * 3)
    assert summary["fit_points"].tolist() == [3, 3, 3]
    steps = pd.read_csv(tmp_path / config.STEPS_FILE)
    assert steps["point"].tolist() == [0, 1, 2]
    assert not os.path.exists(tmp_path / config.FINAL_STATE_FILE)


def test_small_burgers_run(tmp_path):
    status = main(["burgers", "--L", "5", "--t-final", "0.06", "--out", str(tmp_path), "--quiet"])
    assert status == 0
    steps = pd.read_csv(tmp_path / config.STEPS_FILE)
    # dt = 0.9/32: two full steps and a shortened one
    assert len(steps) == 3
    assert {"r_in", "r", "n_eval", "err_l2", "dt", "eps"} <= set(steps.columns)
    assert steps["err_l2"].notna().all()
    summary = pd.read_csv(tmp_path / config.SUMMARY_FILE)
    assert summary.loc[0, "t_reached"] == pytest.approx(0.06)
    assert "mass" in summary.columns and "shock_position" in summary.columns
    state = load_tt((tmp_path / config.FINAL_STATE_FILE).read_text())
    assert state.L == 5


def test_maxwell_step_and_truncate_writes_every_field(tmp_path):
    status = main(["maxwell", "--L", "3", "--t-final", "0.5", "--integrator", "sat",
                   "--out", str(tmp_path), "--quiet"])
    assert status == 0
    assert len(pd.read_csv(tmp_path / config.STEPS_FILE)) == 4
    summary = pd.read_csv(tmp_path / config.SUMMARY_FILE)
    assert summary.loc[0, "scheme"] == "SAT"
    for name in ("Bx", "By"):
        state = load_tt((tmp_path / f"final_state_{name}.txt").read_text())
        assert state.L == 6


# ============================================
# Burgers runs
# ============================================

def test_rarefaction_keeps_the_rank_floor(tmp_path):
    status = main(["burgers", "--ic", "rarefaction", "--L", "6", "--t-final", "0.1",
                   "--flavor", "X", "--out", str(tmp_path), "--quiet"])
    assert status == 0
    steps = pd.read_csv(tmp_path / config.STEPS_FILE)
    assert (steps["r"] >= config.BURGERS_MIN_RANK).all()
    assert steps["r_in"].mean() > 1


def test_interpolative_shock_travels_at_half_speed():
    cfg = RunConfig(experiment="burgers", ic="shock_propagation", L=9, t_final=0.5,
                    flavor="X", scheme="AP", stepper="euler", quiet=True)
    cfg.validate()
    result = run_point(cfg, None, 1e-4, show_progress=False)
    assert not result.diverged
    assert result.summary["t_reached"] == pytest.approx(0.5)
    # front starts at 0.5 with speed 1/2
    assert abs(result.summary["shock_position"] - 0.75) <= 2.0 / 512
    assert result.summary["mean_n_eval"] < 512


@pytest.mark.parametrize("error", [
    np.linalg.LinAlgError("SVD did not converge"),
    NonFiniteError("non-finite entries"),
    SolverBreakdownError("second breakdown"),
    DegenerateSelectionError("rank deficient basis"),
])
def test_failing_step_keeps_earlier_rows(tmp_path, monkeypatch, error):
    real_step = harness.dlr_step

    def failing_step(states, model, dt, t, plan, step=0):
        if step == 2:
            raise error
        return real_step(states, model, dt, t, plan, step=step)

    monkeypatch.setattr(harness, "dlr_step", failing_step)
    status = main(["burgers", "--L", "5", "--t-final", "0.2", "--out", str(tmp_path), "--quiet"])
    assert status == 3
    steps = pd.read_csv(tmp_path / config.STEPS_FILE)
    assert steps["step"].tolist() == [0, 1]
    summary = pd.read_csv(tmp_path / config.SUMMARY_FILE)
    assert bool(summary.loc[0, "diverged"])
    assert summary.loc[0, "n_steps"] == 2


# ============================================
# Unit bench
# ============================================

def test_projector_is_idempotent():
    rng = np.random.default_rng(2)
    x = random_tt([2] * 5, 2, rng)
    target = random_tt([2] * 5, 3, rng)
    for flavor in (Flavor.G, Flavor.X):
        assert projector_idempotence(x, target, flavor) < 1e-8


def test_unit_bench(tmp_path):
    assert main(["unit-bench", "--bench-count", "3", "--seed", "1", "--out", str(tmp_path), "--quiet"]) == 0
    bench = pd.read_csv(tmp_path / config.BENCH_FILE)
    assert len(bench) == 3
    assert (bench["orthonormal_residual"] < 1e-6).all()
    assert (bench["idempotence_G"] < 1e-6).all()
    summary = pd.read_csv(tmp_path / config.SUMMARY_FILE)
    assert summary.loc[0, "count"] == 3
    assert "max_interpolative_residual" in summary.columns
