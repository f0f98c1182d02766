import numpy as np
import pytest
import scipy.linalg

from dlra import (
    Direction,
    Flavor,
    Scheme,
    StateError,
    SweepPlan,
    decimate_ap,
    decimate_ps,
    dlr_step,
    project_operator,
    project_vector,
    site_blocks,
    subspace_expand,
    to_interpolative,
    to_orthonormal,
    two_site_step,
)
from stepper import Coupling, DynamicsModel, Method
from ttcore import (
    Form,
    canonicalize,
    from_dense,
    identity_op,
    random_op,
    random_tt,
    rank_one,
    scale_op,
    verify_canonical,
)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def embedding(tt, site):
    """Columns: dense trains with the center core replaced by unit vectors."""
    shape = tt.cores[site].shape
    columns = []
    for j in range(int(np.prod(shape))):
        unit = np.zeros(int(np.prod(shape)))
        unit[j] = 1.0
        x = tt.with_cores(list(tt.cores))
        x.cores[site] = unit.reshape(shape)
        columns.append(x.dense())
    return np.stack(columns, axis=1)


def sample_rows(tt, site):
    """Dense indices of the multi-indices (left_idx, s, right_idx) in center order."""
    rows = []
    for left in tt.left_idx[site]:
        for s in range(tt.dims[site]):
            for right in tt.right_idx[site]:
                rows.append(np.ravel_multi_index(tuple(left) + (s,) + tuple(right), tt.dims))
    return np.array(rows)


def canonical(x, flavor, site):
    if flavor is Flavor.X:
        return canonicalize(x, site, Form.INTERPOLATIVE)
    return canonicalize(x, site, Form.ORTHONORMAL, with_indices=(flavor is Flavor.P))


def normalized_op(rng, L, rank=2):
    A = random_op([2] * L, rank, rng)
    return scale_op(A, 1.0 / np.linalg.norm(A.dense(), 2))


def linear_model(A):
    return DynamicsModel(n_fields=1, couplings=[Coupling(target=0, source=0, op=A, name="A")])


def relative_error(x, ref):
    return np.linalg.norm(x - ref) / np.linalg.norm(ref)


# ============================================
# Plan validation
# ============================================

def test_plan_validation():
    with pytest.raises(ValueError):
        SweepPlan(scheme=Scheme.AP, two_site=True)
    with pytest.raises(ValueError):
        SweepPlan(r_min=8, r_max=4)
    with pytest.raises(ValueError):
        SweepPlan(rk4_targets="halves")
    with pytest.raises(ValueError):
        SweepPlan(p_blocking="dense")
    with pytest.raises(ValueError):
        SweepPlan(eps=-1.0)
    assert SweepPlan(scheme=Scheme.PS, two_site=True).two_site


# ============================================
# Projections
# ============================================

@pytest.mark.parametrize("flavor", [Flavor.G, Flavor.X, Flavor.P])
def test_projected_identity_is_identity(rng, flavor):
    x = canonical(random_tt([2] * 4, 2, rng), flavor, 1)
    P = project_operator(identity_op([2] * 4), x, x, 1, flavor)
    np.testing.assert_allclose(P, np.eye(P.shape[0]), atol=1e-9)


def test_galerkin_projection_matches_embedding(rng):
    x = canonical(random_tt([2] * 4, 2, rng), Flavor.G, 2)
    A = random_op([2] * 4, 2, rng)
    E = embedding(x, 2)
    np.testing.assert_allclose(project_operator(A, x, x, 2, Flavor.G), E.T @ A.dense() @ E, atol=1e-10)


def test_interpolative_projection_samples_rows(rng):
    x = canonical(random_tt([2] * 4, 2, rng), Flavor.X, 1)
    A = random_op([2] * 4, 2, rng)
    E = embedding(x, 1)
    rows = sample_rows(x, 1)
    np.testing.assert_allclose(E[rows], np.eye(len(rows)), atol=1e-9)
    np.testing.assert_allclose(project_operator(A, x, x, 1, Flavor.X), (A.dense() @ E)[rows], atol=1e-9)


@pytest.mark.parametrize("p_blocking", ["sampled", "oblique"])
def test_oblique_projection_in_sample_coordinates(rng, p_blocking):
    x = canonical(random_tt([2] * 4, 2, rng), Flavor.P, 1)
    A = random_op([2] * 4, 2, rng)
    E = embedding(x, 1)
    rows = sample_rows(x, 1)
    T = E[rows]
    P = project_operator(A, x, x, 1, Flavor.P, p_blocking=p_blocking)
    if p_blocking == "sampled":
        expected = (A.dense() @ E)[rows] @ np.linalg.inv(T)
    else:
        expected = T @ E.T @ A.dense() @ E @ np.linalg.inv(T)
    np.testing.assert_allclose(P, expected, atol=1e-8)


@pytest.mark.parametrize("flavor", [Flavor.G, Flavor.X, Flavor.P])
def test_projected_state_is_its_own_center(rng, flavor):
    x = canonical(random_tt([2] * 5, 2, rng), flavor, 2)
    value = project_vector(x, x, 2, flavor)
    if flavor is Flavor.P:
        gl, gr = site_blocks(x, 2)
        expected = to_interpolative(x.cores[2], gl, gr)
    else:
        expected = x.cores[2]
    np.testing.assert_allclose(value, expected, atol=1e-9)


def test_interpolative_vector_projection_samples(rng):
    x = canonical(random_tt([2] * 4, 2, rng), Flavor.X, 2)
    b = random_tt([2] * 4, 3, rng)
    value = project_vector(b, x, 2, Flavor.X)
    np.testing.assert_allclose(value.reshape(-1), b.dense()[sample_rows(x, 2)], atol=1e-10)


def test_projection_needs_selections(rng):
    x = canonicalize(random_tt([2] * 4, 2, rng), 1, Form.ORTHONORMAL)
    with pytest.raises(StateError):
        project_operator(identity_op([2] * 4), x, x, 1, Flavor.X)
    with pytest.raises(StateError):
        project_vector(x, x, 2, Flavor.G)


def test_sample_coordinate_conversion(rng):
    M = rng.standard_normal((3, 2, 4))
    gl = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    gr = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    M_X = to_interpolative(M, gl, gr)
    np.testing.assert_allclose(M_X, np.einsum("ab,bsc,xc->asx", gl, M, gr))
    np.testing.assert_allclose(to_orthonormal(M_X, gl, gr), M, atol=1e-10)
    with pytest.raises(StateError):
        to_orthonormal(M_X, np.zeros((3, 3)), gr)


# ============================================
# Decimation
# ============================================

@pytest.mark.parametrize("flavor", [Flavor.G, Flavor.X])
def test_subspace_expansion_spans_candidates(rng, flavor):
    c0 = rng.standard_normal((2, 2, 3))
    c1 = c0 + 0.1 * rng.standard_normal((2, 2, 3))
    exp = subspace_expand([c0, c1], flavor, eps_in=1e-12)
    basis = exp.core.reshape(4, -1)
    for c, w in zip([c0, c1], exp.weights):
        np.testing.assert_allclose(basis @ w, c.reshape(4, -1), atol=1e-10)
    if flavor is Flavor.X:
        np.testing.assert_allclose(basis[exp.sel], np.eye(exp.rank), atol=1e-10)
    else:
        np.testing.assert_allclose(basis.T @ basis, np.eye(exp.rank), atol=1e-10)


def test_interpolative_expansion_samples_the_update(rng):
    c0 = rng.standard_normal((8, 2, 2))
    c1 = c0.copy()
    c1.reshape(16, 2)[11, 0] += 1.0
    exp = subspace_expand([c0, c1], Flavor.X, eps_in=1e-12)
    assert 11 in exp.sel
    assert exp.rank <= 6
    basis = exp.core.reshape(16, -1)
    for c, w in zip([c0, c1], exp.weights):
        np.testing.assert_allclose(basis @ w, c.reshape(16, -1), atol=1e-10)


def test_oblique_expansion_needs_left_block(rng):
    with pytest.raises(StateError):
        subspace_expand([rng.standard_normal((1, 2, 2))], Flavor.P, eps_in=1e-12)


def test_decimate_ap_keeps_the_state(rng):
    x = canonical(random_tt([2] * 4, 2, rng), Flavor.X, 0)
    M = x.cores[0]
    exp = subspace_expand([M, M + 0.2 * rng.standard_normal(M.shape)], Flavor.X, eps_in=1e-12)
    out = decimate_ap(x, 0, exp)
    assert out.center == 1
    np.testing.assert_allclose(out.dense(), x.dense(), atol=1e-10)
    assert verify_canonical(out).ok
    with pytest.raises(ValueError):
        decimate_ap(x, 3, exp)


@pytest.mark.parametrize("flavor", [Flavor.G, Flavor.X])
def test_decimate_ps_with_frozen_bond(rng, flavor):
    x = canonical(random_tt([2] * 4, 2, rng), flavor, 0)
    out = decimate_ps(x, 0, 1.5 * x.cores[0], flavor, evolve_bond=lambda tt, W: W)
    assert out.center == 1
    np.testing.assert_allclose(out.dense(), 1.5 * x.dense(), atol=1e-10)
    with pytest.raises(ValueError):
        decimate_ps(x, 3, x.cores[3], flavor, evolve_bond=lambda tt, W: W)


# ============================================
# Time steps
# ============================================

@pytest.mark.parametrize("flavor", [Flavor.G, Flavor.X, Flavor.P])
def test_ap_euler_is_exact_at_full_rank(rng, flavor):
    u = random_tt([2] * 4, [2, 4, 2], rng)
    A = normalized_op(rng, 4)
    plan = SweepPlan(flavor=flavor, scheme=Scheme.AP, stepper=Method.EULER,
                     eps=1e-12, eps_in=1e-12, r_max=None)
    (new,), record = dlr_step([u], linear_model(A), dt=0.1, t=0.0, plan=plan, step=1)
    expected = u.dense() + 0.1 * A.dense() @ u.dense()
    assert relative_error(new.dense(), expected) < 1e-8
    assert record.flavor == flavor.value and record.scheme == "AP"
    assert record.time == pytest.approx(0.1)
    assert record.n_eval > 0


def test_ap_right_to_left_sweep_is_exact_at_full_rank(rng):
    u = random_tt([2] * 4, [2, 4, 2], rng)
    A = normalized_op(rng, 4)
    plan = SweepPlan(flavor=Flavor.X, scheme=Scheme.AP, stepper=Method.EULER, eps=1e-12,
                     eps_in=1e-12, r_max=None, direction=Direction.RIGHT_TO_LEFT)
    (new,), _ = dlr_step([u], linear_model(A), dt=0.1, t=0.0, plan=plan)
    expected = u.dense() + 0.1 * A.dense() @ u.dense()
    assert relative_error(new.dense(), expected) < 1e-8


def test_ap_integrates_a_source_exactly(rng):
    u = random_tt([2] * 5, 2, rng)
    b = random_tt([2] * 5, 1, rng)
    model = DynamicsModel(n_fields=1, couplings=[], sources=[b])
    plan = SweepPlan(flavor=Flavor.X, scheme=Scheme.AP, stepper=Method.EULER,
                     eps=1e-12, eps_in=1e-12, r_max=None)
    (new,), _ = dlr_step([u], model, dt=0.25, t=0.0, plan=plan)
    assert relative_error(new.dense(), u.dense() + 0.25 * b.dense()) < 1e-8


@pytest.mark.parametrize("flavor", [Flavor.G, Flavor.X, Flavor.P])
def test_projector_splitting_tracks_exponential(rng, flavor):
    u = random_tt([2] * 4, [2, 4, 2], rng)
    A = normalized_op(rng, 4)
    dt = 0.02
    plan = SweepPlan(flavor=flavor, scheme=Scheme.PS, stepper=Method.RK4,
                     eps=1e-12, eps_in=1e-12, r_max=None)
    (new,), record = dlr_step([u], linear_model(A), dt=dt, t=0.0, plan=plan)
    expected = scipy.linalg.expm(dt * A.dense()) @ u.dense()
    assert relative_error(new.dense(), expected) < 1e-3
    assert record.scheme == "PS"


@pytest.mark.parametrize("stepper, lowest, highest", [
    (Method.EULER, 0.8, 1.3),
    (Method.RK4, 1.7, None),
])
def test_projector_splitting_order(rng, stepper, lowest, highest):
    u = random_tt([2] * 4, [2, 4, 2], rng)
    A = normalized_op(rng, 4)
    model = linear_model(A)
    t_final = 0.4
    expected = scipy.linalg.expm(t_final * A.dense()) @ u.dense()
    errors = []
    for dt in (0.1, 0.05):
        plan = SweepPlan(flavor=Flavor.G, scheme=Scheme.PS, stepper=stepper,
                         eps=1e-12, eps_in=1e-12, r_max=None)
        states = [u]
        for k in range(int(round(t_final / dt))):
            states, _ = dlr_step(states, model, dt=dt, t=k * dt, plan=plan, step=k)
        errors.append(relative_error(states[0].dense(), expected))
    slope = np.log2(errors[0] / errors[1])
    assert slope > lowest
    if highest is not None:
        assert slope < highest


def test_two_site_projector_splitting(rng):
    u = random_tt([2] * 4, [2, 4, 2], rng)
    A = normalized_op(rng, 4)
    dt = 0.02
    plan = SweepPlan(flavor=Flavor.G, scheme=Scheme.PS, stepper=Method.RK4, two_site=True,
                     eps=1e-12, eps_in=1e-12, r_max=None)
    (new,), record = dlr_step([u], linear_model(A), dt=dt, t=0.0, plan=plan)
    expected = scipy.linalg.expm(dt * A.dense()) @ u.dense()
    assert relative_error(new.dense(), expected) < 1e-3
    assert record.scheme == "PS-2site"
    with pytest.raises(ValueError):
        two_site_step([u], linear_model(A), dt, 0.0, SweepPlan(scheme=Scheme.PS))


def test_two_site_sweep_grows_rank_from_one(rng):
    u = random_tt([2] * 4, 1, rng)
    A = normalized_op(rng, 4)
    dt = 0.05
    plan = SweepPlan(flavor=Flavor.G, scheme=Scheme.PS, stepper=Method.RK4, two_site=True,
                     eps=1e-10, eps_in=1e-10, r_max=None)
    (new,), _ = dlr_step([u], linear_model(A), dt=dt, t=0.0, plan=plan)
    expected = scipy.linalg.expm(dt * A.dense()) @ u.dense()
    reference = from_dense(expected, [2] * 4, eps=1e-10)
    assert reference.max_rank > 1
    assert new.ranks == reference.ranks
    assert relative_error(new.dense(), expected) < 1e-2


def test_coupled_fields_step(rng):
    L = 3
    u = [random_tt([2] * L, [2, 2], rng), random_tt([2] * L, [2, 2], rng)]
    A = normalized_op(rng, L)
    model = DynamicsModel(n_fields=2, couplings=[
        Coupling(target=0, source=1, op=A),
        Coupling(target=1, source=0, op=scale_op(A, -1.0)),
    ])
    plan = SweepPlan(flavor=Flavor.X, scheme=Scheme.AP, stepper=Method.EULER,
                     eps=1e-12, eps_in=1e-12, r_max=None)
    new, _ = dlr_step(u, model, dt=0.1, t=0.0, plan=plan)
    Ad = A.dense()
    expected = [u[0].dense() + 0.1 * Ad @ u[1].dense(), u[1].dense() - 0.1 * Ad @ u[0].dense()]
    for got, ref in zip(new, expected):
        assert relative_error(got.dense(), ref) < 1e-8


def test_galerkin_rejects_nonlinear_model():
    model = DynamicsModel(n_fields=1, couplings=[], nonlinear=True)
    with pytest.raises(ValueError):
        dlr_step([rank_one([np.ones(2)] * 3)], model, 0.1, 0.0, SweepPlan(flavor=Flavor.G))


def test_state_count_must_match_model(rng):
    model = linear_model(identity_op([2] * 3))
    u = random_tt([2] * 3, 1, rng)
    with pytest.raises(ValueError):
        dlr_step([u, u], model, 0.1, 0.0, SweepPlan())
