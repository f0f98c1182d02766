import numpy as np
import pytest
import scipy.linalg

from stepper import (
    Coupling,
    DiagnosticsRecord,
    DynamicsModel,
    Method,
    ReducedProblem,
    SolverDivergenceError,
    crank_nicolson,
    euler,
    integrate,
    rk4,
    sat_step,
)
from ttcore import identity_op, random_tt, rank_one


def decay(M, t):
    return -M


@pytest.fixture
def decay_problem():
    return ReducedProblem(apply=decay, is_linear=True)


# ============================================
# Reduced-problem integrators
# ============================================

def test_euler_decay(decay_problem):
    out = euler(decay_problem, np.array([1.0]), 0.0, 0.1)
    assert out[0] == pytest.approx(0.9)


def test_rk4_decay(decay_problem):
    out, stages = rk4(decay_problem, np.array([1.0]), 0.0, 0.5)
    assert out[0] == pytest.approx(0.6067708333, rel=1e-9)
    assert len(stages) == 4
    assert stages[1][0] == pytest.approx(0.75)


def test_crank_nicolson_decay(decay_problem):
    out = crank_nicolson(decay_problem, np.array([1.0]), 0.0, 0.2, tol=1e-14)
    assert out[0] == pytest.approx(0.9 / 1.1, rel=1e-10)


def test_crank_nicolson_affine_offset():
    rp = ReducedProblem(apply=lambda M, t: 1.0 - M, is_linear=True)
    out = crank_nicolson(rp, np.array([0.0]), 0.0, 0.2, tol=1e-14)
    assert out[0] == pytest.approx(0.2 / 1.1, rel=1e-10)


def test_crank_nicolson_with_matrix_provider():
    rng = np.random.default_rng(3)
    A = -np.eye(6) + 0.1 * rng.standard_normal((6, 6))
    M0 = rng.standard_normal((2, 3))
    free = ReducedProblem(apply=lambda M, t: (A @ M.reshape(-1)).reshape(M.shape), is_linear=True)
    dense = ReducedProblem(apply=free.apply, is_linear=True, matrix=lambda t: A)
    expected = np.linalg.solve(np.eye(6) - 0.05 * A, (np.eye(6) + 0.05 * A) @ M0.reshape(-1))
    np.testing.assert_allclose(crank_nicolson(free, M0, 0.0, 0.1, tol=1e-13).reshape(-1), expected, atol=1e-10)
    np.testing.assert_allclose(crank_nicolson(dense, M0, 0.0, 0.1, tol=1e-13).reshape(-1), expected, atol=1e-10)


def test_crank_nicolson_needs_linear_problem():
    rp = ReducedProblem(apply=lambda M, t: -M ** 2, is_linear=False)
    with pytest.raises(ValueError):
        crank_nicolson(rp, np.array([1.0]), 0.0, 0.1)


def test_non_finite_step_raises():
    rp = ReducedProblem(apply=lambda M, t: np.full_like(M, np.nan))
    with pytest.raises(SolverDivergenceError):
        euler(rp, np.array([1.0]), 0.0, 0.1)
    with pytest.raises(SolverDivergenceError):
        rk4(rp, np.array([1.0]), 0.0, 0.1)


def test_rk4_order_on_decay(decay_problem):
    errors = []
    for n in (4, 8):
        M = np.array([1.0])
        for i in range(n):
            M, _ = rk4(decay_problem, M, i / n, 1.0 / n)
        errors.append(abs(M[0] - np.exp(-1.0)))
    assert np.log2(errors[0] / errors[1]) == pytest.approx(4.0, abs=0.2)


@pytest.mark.parametrize("method, order", [
    (Method.EULER, 1.0),
    (Method.RK4, 4.0),
    (Method.CN, 2.0),
])
def test_global_order_on_linear_system(method, order):
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 4))
    A /= np.linalg.norm(A, 2)
    rp = ReducedProblem(apply=lambda M, t: A @ M, is_linear=True, matrix=lambda t: A)
    M0 = rng.standard_normal(4)
    expected = scipy.linalg.expm(A) @ M0
    errors = []
    for n in (20, 40):
        dt = 1.0 / n
        M = M0
        for k in range(n):
            M, _ = integrate(method, rp, M, k * dt, dt, tol=1e-13)
        errors.append(np.linalg.norm(M - expected))
    assert np.log2(errors[0] / errors[1]) == pytest.approx(order, abs=0.3)


def test_crank_nicolson_preserves_norm_for_skew_hermitian():
    rng = np.random.default_rng(8)
    B = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    A = B - B.conj().T
    rp = ReducedProblem(apply=lambda M, t: A @ M, is_linear=True, matrix=lambda t: A)
    M = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    norm0 = np.linalg.norm(M)
    for k in range(50):
        M = crank_nicolson(rp, M, k * 0.1, 0.1, tol=1e-13)
    assert np.linalg.norm(M) == pytest.approx(norm0, rel=1e-9)


# ============================================
# Targets for subspace expansion
# ============================================

def test_integrate_targets(decay_problem):
    M = np.array([1.0])
    out, targets = integrate(Method.EULER, decay_problem, M, 0.0, 0.1)
    assert len(targets) == 2 and targets[-1] is out

    out, targets = integrate(Method.RK4, decay_problem, M, 0.0, 0.1)
    assert len(targets) == 5
    assert targets[0][0] == 1.0 and targets[-1][0] == out[0]

    out, targets = integrate(Method.CN, decay_problem, M, 0.0, 0.1)
    assert len(targets) == 2


def test_integrate_rk4_thirds(decay_problem):
    out, targets = integrate(Method.RK4, decay_problem, np.array([1.0]), 0.0, 0.3, rk4_targets="thirds")
    assert len(targets) == 4
    assert targets[1][0] == pytest.approx(np.exp(-0.1), rel=1e-6)
    assert out[0] == pytest.approx(np.exp(-0.3), rel=1e-6)
    with pytest.raises(ValueError):
        integrate(Method.RK4, decay_problem, np.array([1.0]), 0.0, 0.3, rk4_targets="halves")


# ============================================
# Problem description
# ============================================

def test_model_rejects_missing_fields():
    op = identity_op([2, 2])
    with pytest.raises(ValueError):
        DynamicsModel(n_fields=1, couplings=[Coupling(target=1, source=0, op=op)])
    with pytest.raises(ValueError):
        DynamicsModel(n_fields=2, couplings=[], sources=[None])


def test_default_rate_sums_couplings():
    op = identity_op([2])
    model = DynamicsModel(
        n_fields=2,
        couplings=[
            Coupling(target=0, source=1, op=op, coeff=lambda t: 2.0),
            Coupling(target=0, source=0, op=op, coeff=lambda t: -1.0),
        ],
    )
    fields = [np.ones(2), np.zeros(2)]
    applied = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
    rates = model.rate(fields, applied, 0.0)
    np.testing.assert_allclose(rates[0], [-1.0, 0.0])
    np.testing.assert_allclose(rates[1], [0.0, 0.0])


def test_weighted_coupling_folds_diagonal():
    rng = np.random.default_rng(5)
    w = random_tt([2] * 3, 2, rng)
    c = Coupling(target=0, source=0, op=identity_op([2] * 3), weight=w)
    np.testing.assert_allclose(c.folded_op().dense(), np.diag(w.dense()), atol=1e-12)
    assert c.folded_op() is c.folded_op()


# ============================================
# Step and truncate
# ============================================

def test_sat_step_linear_decay():
    u = rank_one([np.array([1.0, 2.0])] * 3)
    model = DynamicsModel(
        n_fields=1,
        couplings=[Coupling(target=0, source=0, op=identity_op([2] * 3), coeff=lambda t: -1.0)],
    )
    (new,), record = sat_step([u], model, dt=0.1, t=0.0, eps=1e-12, step=3)
    np.testing.assert_allclose(new.dense(), 0.9 * u.dense(), atol=1e-12)
    assert isinstance(record, DiagnosticsRecord)
    assert record.r_in == 2 and record.r == 1
    assert record.n_eval == 6
    assert record.time == pytest.approx(0.1)
    assert record.flavor == "SAT" and record.stepper == "euler"
    assert set(record.as_row()) >= {"step", "time", "r_in", "r", "n_eval", "wall_seconds", "err_l2"}


def test_sat_step_counts_rate_entries():
    u = rank_one([np.array([1.0, 2.0])] * 3)
    model = DynamicsModel(n_fields=1, couplings=[
        Coupling(target=0, source=0, op=identity_op([2] * 3), coeff=lambda t: -1.0),
        Coupling(target=0, source=0, op=identity_op([2] * 3), coeff=lambda t: 0.5),
    ])
    (new,), record = sat_step([u], model, dt=0.1, t=0.0, eps=1e-12)
    np.testing.assert_allclose(new.dense(), 0.95 * u.dense(), atol=1e-12)
    # rate train of ranks (1, 2, 2, 1): 4 + 8 + 4 entries
    assert record.n_eval == 16


def test_sat_step_adds_source_and_weight():
    rng = np.random.default_rng(9)
    u = random_tt([2] * 3, 2, rng)
    w = random_tt([2] * 3, 1, rng)
    b = random_tt([2] * 3, 1, rng)
    model = DynamicsModel(
        n_fields=1,
        couplings=[Coupling(target=0, source=0, op=identity_op([2] * 3), weight=w)],
        sources=[b],
    )
    (new,), _ = sat_step([u], model, dt=0.05, t=0.0, eps=1e-13)
    expected = u.dense() + 0.05 * (w.dense() * u.dense() + b.dense())
    np.testing.assert_allclose(new.dense(), expected, atol=1e-10)


def test_sat_step_rejects_nonlinear_model():
    model = DynamicsModel(n_fields=1, couplings=[], nonlinear=True)
    with pytest.raises(ValueError):
        sat_step([rank_one([np.ones(2)])], model, dt=0.1, t=0.0, eps=1e-8)
