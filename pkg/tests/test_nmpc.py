import numpy as np
import pytest

from payload_nmpc.errors import ReferenceLengthMismatch
from payload_nmpc.nmpc import (build_ocp, check_kkt, n_decision_vars, project_pyramid, solve)
from payload_nmpc.nmpc.ocp import FRICTION_MU, FZ_MAX
from payload_nmpc.scenario import (build_controller, build_system, generate_references,
                                   initial_state, load_scenario, resolve_scenario)
from payload_nmpc.srb import trot_schedule

from conftest import lq_case, rel_err

G = 9.81


@pytest.fixture(scope="module")
def exp1():
    return load_scenario(resolve_scenario("experiment1_nominal"))


def _problem(spec, N=8, x=None, t=0.0, safety=True, obstacles=None):
    sysm = build_system(spec)
    x = initial_state(spec) if x is None else x
    obs = spec.obstacle_list if obstacles is None else obstacles
    return build_ocp(x, generate_references(spec, t, N, spec.dt_s), trot_schedule(t, N, spec.dt_s), obs,
                     spec.weights, spec.controller_hocbf, sysm, N=N, Ts=spec.dt_s, safety=safety)


# -- sizes ------------------------------------------------------------------

def test_decision_count_identity(exp1):
    assert n_decision_vars(8) == 596
    assert 36 * 9 + 34 * 8 == 596
    assert _problem(exp1).n_vars == 596


@pytest.mark.parametrize("N", [1, 2, 5, 8, 12])
def test_decision_count_scales(exp1, N):
    assert _problem(exp1, N=N).n_vars == 36 * (N + 1) + 34 * N


def test_constraint_counts_without_obstacles(exp1):
    N = 8
    prob = _problem(exp1, safety=False)
    st = trot_schedule(0.0, N, exp1.dt_s).stance[:N]
    n_swing = int(round(2 * 3 * np.sum(st < 0.5)))
    n_stance = int(round(2 * np.sum(st > 0.5)))
    assert prob.n_eq == 36 + 36 * N + 10 * N + n_swing
    # four friction rows plus the normal-force cap per stance foot (fz >= 0 follows from them)
    assert prob.n_pyramid == 5 * n_stance
    assert prob.n_cbf == 0


def test_barrier_row_count(exp1):
    N = 8
    prob = _problem(exp1)
    assert len(exp1.obstacle_list) == 6
    # psi2 rows for k <= N-2 plus one terminal psi1 row per pair
    assert prob.n_cbf == 3 * 6 * (N - 1) + 18
    assert prob.n_ineq == prob.n_pyramid + prob.n_cbf


def test_reference_length_mismatch(exp1):
    sysm = build_system(exp1)
    refs = generate_references(exp1, 0.0, 7, exp1.dt_s)
    with pytest.raises(ReferenceLengthMismatch):
        build_ocp(initial_state(exp1), refs, trot_schedule(0.0, 8, exp1.dt_s), [], exp1.weights, None, sysm, N=8)
    with pytest.raises(ReferenceLengthMismatch):
        build_ocp(initial_state(exp1), [refs[:, :12]] * 3, trot_schedule(0.0, 8, exp1.dt_s), [], exp1.weights,
                  None, sysm, N=8)
    with pytest.raises(ReferenceLengthMismatch):
        build_ocp(initial_state(exp1), generate_references(exp1, 0.0, 8, exp1.dt_s), trot_schedule(0.0, 5, exp1.dt_s),
                  [], exp1.weights, None, sysm, N=8)


# -- flat NLP Jacobians -----------------------------------------------------

def _random_z(prob, rng):
    X = prob.x_ref + rng.normal(0.0, 0.05, prob.x_ref.shape)
    X[:, 3:5] = rng.uniform(-0.2, 0.2, (X.shape[0], 2))
    U = prob.hover_guess() + rng.normal(0.0, 5.0, (prob.N, prob.nu))
    return prob.pack(X, U)


def _fd_jac(fun, z, eps=1e-6):
    cols = []
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = eps
        cols.append((fun(z + e) - fun(z - e)) / (2.0 * eps))
    return np.array(cols).T


def _jac_rel(J, Jfd):
    return float(np.abs(J - Jfd).max() / max(1.0, np.abs(Jfd).max()))


def test_flat_nlp_jacobians_fd(exp1, rng):
    """Equality and inequality Jacobians of the flat NLP on 100 random points (N = 2)."""
    # obstacles close to the start so barrier rows carry real curvature
    obs = [(-0.4, 0.6), (0.5, -0.7), (1.5, 0.2)]
    worst_eq = worst_in = 0.0
    for i in range(100):
        t = 0.05 * i
        x = initial_state(exp1)
        prob = _problem(exp1, N=2, x=x, t=t, obstacles=obs)
        assert prob.n_cbf == 3 * 3 * 2
        z = _random_z(prob, rng)
        worst_eq = max(worst_eq, _jac_rel(prob.eq_jacobian(z).toarray(), _fd_jac(prob.eq_constraints, z)))
        worst_in = max(worst_in, _jac_rel(prob.ineq_jacobian(z).toarray(), _fd_jac(prob.ineq_constraints, z)))
    assert worst_eq < 1e-5
    assert worst_in < 1e-5


def test_flat_nlp_jacobians_fd_full_horizon(exp1, rng):
    for _ in range(3):
        prob = _problem(exp1, N=8, obstacles=[(0.2, 0.7), (1.0, -0.6)])
        z = _random_z(prob, rng)
        assert _jac_rel(prob.eq_jacobian(z).toarray(), _fd_jac(prob.eq_constraints, z)) < 1e-5
        assert _jac_rel(prob.ineq_jacobian(z).toarray(), _fd_jac(prob.ineq_constraints, z)) < 1e-5


def test_objective_gradient_fd(exp1, rng):
    prob = _problem(exp1, N=2)
    for _ in range(10):
        z = _random_z(prob, rng)
        g = _fd_jac(lambda v: np.array([prob.objective(v)]), z)[0]
        assert rel_err(prob.objective_grad(z), g) < 1e-5


# -- LQ oracle --------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_single_body_lq_matches_dense_oracle(robot_params, seed):
    err = lq_case(seed, robot_params)
    assert err["status"] == "converged"
    assert err["states"] < 1e-6
    assert err["forces"] < 1e-6
    # with level rotation references the optimal torque is zero and attitude stays level
    assert err["torques"] < 1e-6
    assert err["attitude"] < 1e-9


# -- solves -----------------------------------------------------------------

def test_hover_first_input_balances_weight():
    """Reference = current state, no obstacles: stance forces carry robot plus half the payload."""
    spec = load_scenario(resolve_scenario("hover"))
    sysm = build_system(spec)
    x0 = initial_state(spec)
    prob = build_ocp(x0, np.tile(x0, (9, 1)), trot_schedule(0.0, 8, spec.dt_s), [], spec.weights, None, sysm)
    res = solve(prob)
    assert res.status == "converged"
    m = sysm.masses
    for i in range(2):
        fz = res.first_input[12 * i + 2:12 * i + 12:3].sum()
        target = (m[i] + 0.5 * m[2]) * G
        assert abs(fz - target) < 1e-3, f"robot {i + 1}: stance fz {fz:.4f} N vs weight share {target:.4f} N"


def test_hover_edge_wrenches_split_payload_weight():
    spec = load_scenario(resolve_scenario("hover"))
    sysm = build_system(spec)
    x0 = initial_state(spec)
    prob = build_ocp(x0, np.tile(x0, (9, 1)), trot_schedule(0.0, 8, spec.dt_s), [], spec.weights, None, sysm)
    res = solve(prob)
    lam = res.first_input[24:]
    # mirrored formation: both edges carry the same vertical share
    assert abs(lam[2] - lam[7]) < 1e-6 * sysm.masses[2] * G
    assert abs(abs(lam[2] + lam[7]) - sysm.masses[2] * G) < 0.05 * sysm.masses[2] * G


def test_warm_resolve_is_fixed_point(exp1):
    prob = _problem(exp1)
    first = solve(prob)
    assert first.status == "converged"
    again = solve(prob, warm_start=first, shift=False)
    assert again.iterations <= 2
    assert np.abs(again.first_input - first.first_input).max() < 1e-8


def test_solve_is_deterministic(exp1):
    a = solve(_problem(exp1))
    b = solve(_problem(exp1))
    assert a.iterations == b.iterations
    assert np.array_equal(a.X, b.X)
    assert np.array_equal(a.U, b.U)


def test_controller_identical_states_identical_inputs(exp1):
    ctrl = build_controller(exp1)
    x0 = initial_state(exp1)
    g1, r1 = ctrl.step(x0, 0.0)
    g2, r2 = ctrl.step(x0, 0.0)
    assert np.abs(g1 - g2).max() < 1e-8
    ctrl2 = build_controller(exp1)
    g3, _ = ctrl2.step(x0, 0.0)
    assert np.array_equal(g1, g3)


def test_cold_start_on_experiment1_initial_condition(exp1):
    ctrl = build_controller(exp1)
    grfs, res = ctrl.step(initial_state(exp1), 0.0)
    assert res.status == "converged"
    assert res.iterations <= exp1.max_iter
    assert grfs.shape == (2, 12)
    assert res.X.shape == (9, 36) and res.U.shape == (8, 34)
    assert res.slack_total == 0.0
    assert check_kkt(ctrl.last_problem, res).passed
    mean_ms, std_ms = ctrl.solve_time_stats()
    assert mean_ms > 0.0 and std_ms == 0.0


def test_kkt_checker_passes_on_converged_solves(exp1):
    ctrl = build_controller(exp1)
    x = initial_state(exp1)
    for k in range(5):
        _, res = ctrl.step(x, k * exp1.dt_s)
        assert res.status == "converged"
        rep = check_kkt(ctrl.last_problem, res)
        assert rep.passed, rep
        x = res.X[1]


def test_kkt_checker_rejects_perturbed_solution(exp1):
    prob = _problem(exp1)
    res = solve(prob)
    assert check_kkt(prob, res).passed
    res.U = res.U.copy()
    res.U[0, 2] += 1.0
    assert not check_kkt(prob, res).passed


def test_first_input_respects_pyramid(exp1):
    prob = _problem(exp1)
    res = solve(prob)
    st = prob.stance[0]
    f = res.first_input[:24].reshape(8, 3)
    for j, foot in enumerate(f):
        if st.reshape(-1)[j] > 0.5:
            assert -1e-6 <= foot[2] <= FZ_MAX + 1e-6
            assert abs(foot[0]) <= FRICTION_MU * foot[2] + 1e-6
            assert abs(foot[1]) <= FRICTION_MU * foot[2] + 1e-6
        else:
            assert np.all(foot == 0.0)


def test_project_pyramid_is_idempotent(rng):
    for _ in range(50):
        f = rng.normal(0.0, 100.0, 3)
        pf = project_pyramid(f)
        assert np.allclose(project_pyramid(pf), pf)
        assert -1e-9 <= pf[2] <= FZ_MAX + 1e-9
        assert abs(pf[0]) <= FRICTION_MU * pf[2] + 1e-9


def test_barrier_rows_keep_prediction_safe(exp1):
    # place the assembly right in front of an obstacle on its path
    obs = [(0.75, 0.0)]
    prob = _problem(exp1, obstacles=obs)
    res = solve(prob)
    psi = prob.cbf_values(res.X)
    assert psi.min() >= -1e-6 or res.slack_total > 0.0
    unsafe = _problem(exp1, obstacles=obs, safety=False)
    assert unsafe.n_cbf == 0
