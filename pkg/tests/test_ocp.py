import numpy as np
import pytest

from wallhopper import costmap, ocp, terrain
from wallhopper import dynamics as dyn

PARAMS = dyn.RobotParams()


@pytest.fixture(scope="module")
def flat_setup():
    hm = terrain.generate_terrain("flat", {}, 0)
    cm = costmap.compose(hm, (1.0, 1.0, 10.0))
    return hm, cm


def make_problem(flat_setup, target, params=PARAMS, start=(5.0, -10.0)):
    hm, cm = flat_setup
    p0 = np.array([0.05, start[0], start[1]])
    x0 = np.concatenate([dyn.inverse_kinematics(p0, params), np.zeros(3)])
    return ocp.JumpProblem(x0=x0, target=target, terrain=hm, costmap=cm, params=params)


def test_initial_guess_values(flat_setup):
    prob = make_problem(flat_setup, ocp.PatchTarget(centroid=(5.5, -13.5), half_extent=(0.5, 0.5)))
    U0, t_f0 = ocp.initial_guess(prob)
    # rope forces start at zero
    assert np.all(U0[:, :2] == 0.0)
    # leg impulse at full magnitude along the outward normal (flat wall: +X)
    assert np.linalg.norm(U0[0, 2:]) == pytest.approx(300.0)
    assert U0[0, 2] == pytest.approx(300.0, rel=1e-3)
    assert np.all(U0[1:, 2:] == 0.0)
    # pendulum period about the anchor midpoint
    p0 = dyn.forward_kinematics(prob.x0[:3], PARAMS)
    l_eq = np.linalg.norm(p0 - np.array([0.0, 5.0, 0.0]))
    assert t_f0 == pytest.approx(2 * np.pi * np.sqrt(l_eq / 9.81))


def test_initial_guess_pendulum_example():
    # hanging 10 m below the anchor midpoint: 2*pi*sqrt(10/9.81) ~ 6.34 s
    assert 2 * np.pi * np.sqrt(10.0 / 9.81) == pytest.approx(6.347, abs=5e-3)


def test_energy_components():
    # constant left rope force with constant rate: |f l dot| t_f
    N = 30
    U = np.zeros((N, 5))
    U[:, 0] = -10.0
    X = np.zeros((N + 1, 6))
    X[:, 4] = 0.2
    e = ocp.energy(U, X, 3.0, PARAMS)
    assert e == pytest.approx(10.0 * 0.2 * 3.0)

    # pure thrust: impulse f * t_th / m = 2 m/s -> 0.5 * 5 * 4 = 10 J
    U = np.zeros((N, 5))
    U[0, 2] = 2.0 * PARAMS.m / PARAMS.t_th
    X = np.zeros((N + 1, 6))
    assert ocp.energy(U, X, 3.0, PARAMS) == pytest.approx(10.0)

    # all-zero controls from rest: no consumption
    assert ocp.energy(np.zeros((N, 5)), np.zeros((N + 1, 6)), 3.0, PARAMS) == 0.0


def test_objective_terms(flat_setup):
    prob = make_problem(flat_setup, ocp.PatchTarget(centroid=(5.5, -13.5), half_extent=(0.5, 0.5)))
    N = prob.N
    X = np.zeros((N + 1, 6))
    X[:, :3] = prob.x0[:3]
    # zero rope forces: only the landing-cost term remains (flat map: zero)
    assert ocp.objective(np.zeros((N, 5)), X, 3.0, prob) == pytest.approx(0.0, abs=1e-9)
    # constant rope force: smoothing contributes only the k=0 step from zero
    U = np.zeros((N, 5))
    U[:, 0] = -40.0
    val = ocp.objective(U, X, 3.0, prob)
    assert val == pytest.approx(prob.w_s * 40.0**2, rel=1e-9)


def test_flat_wall_downward_jump_converges(flat_setup):
    target = ocp.PatchTarget(centroid=(5.5, -13.5), half_extent=(0.5, 0.5))
    prob = make_problem(flat_setup, target)
    sol = ocp.solve(prob)
    assert sol.converged
    assert sol.max_violation <= 1e-4
    # landing inside the patch box
    assert abs(sol.landing_point[1] - 5.5) <= 0.5 + 1e-4
    assert abs(sol.landing_point[2] + 13.5) <= 0.5 + 1e-4
    # on the mesh within the relaxation
    assert abs(sol.landing_point[0]) <= prob.eps_land + 1e-4
    # solution states are exactly the rollout of the controls
    X2 = ocp.rollout_knots(prob, sol.U, sol.t_f)
    assert np.array_equal(sol.X, X2)
    # rope forces respect the sign convention
    assert np.all(sol.U[:, :2] <= 1e-12)


def test_solve_deterministic(flat_setup):
    target = ocp.PatchTarget(centroid=(4.5, -12.5), half_extent=(0.5, 0.5))
    prob = make_problem(flat_setup, target)
    a = ocp.solve(prob, seed=3)
    b = ocp.solve(prob, seed=3)
    assert np.array_equal(a.U, b.U)
    assert a.t_f == b.t_f


def test_degenerate_jump_back_to_start(flat_setup):
    # zero required displacement: converges, consuming only modest energy
    # (the thrust needed to satisfy the mid-jump clearance plus the hoist work
    # of arresting the resulting swing)
    params = dyn.RobotParams(f_r_min=0.0)
    prob = make_problem(flat_setup, ocp.GoalTarget(point=(0.05, 5.0, -10.0)), params=params)
    sol = ocp.solve(prob)
    assert sol.converged
    assert np.linalg.norm(sol.landing_point - np.array([0.05, 5.0, -10.0])) <= 0.05 + 1e-4
    assert sol.c_e < 500.0


def test_infeasible_without_authority(flat_setup):
    # no rope force and a weak leg cannot reach an upward goal
    params = dyn.RobotParams(f_r_max=0.0, f_r_min=0.0, f_leg_max=50.0)
    prob = make_problem(flat_setup, ocp.GoalTarget(point=(0.05, 5.0, -4.0)), params=params)
    sol = ocp.solve(prob)
    assert not sol.converged
    assert sol.max_violation > 1e-2


def test_objective_gradient_matches_fd(flat_setup):
    target = ocp.PatchTarget(centroid=(5.5, -13.5), half_extent=(0.5, 0.5))
    prob = make_problem(flat_setup, target)
    rng = np.random.default_rng(5)
    U = np.zeros((prob.N, 5))
    U[:, :2] = rng.uniform(-40.0, 0.0, (prob.N, 2))
    U[0, 2:] = np.array([250.0, 10.0, 30.0])
    t_f = 3.2
    _, grad = ocp.objective_gradient(U, t_f, prob)
    theta = np.concatenate([U.ravel(), [t_f]])
    idx = list(range(0, theta.size, 13)) + [theta.size - 1]
    for j in idx:
        h = 1e-5 * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        op, _ = ocp.objective_gradient(tp[:-1].reshape(-1, 5), tp[-1], prob)
        om, _ = ocp.objective_gradient(tm[:-1].reshape(-1, 5), tm[-1], prob)
        gfd = (op - om) / (2 * h)
        assert abs(gfd - grad[j]) <= 1e-4 * max(1.0, abs(gfd)), f"coordinate {j}"


def test_evaluate_constraints_flags_tampering(flat_setup):
    target = ocp.PatchTarget(centroid=(5.5, -13.5), half_extent=(0.5, 0.5))
    prob = make_problem(flat_setup, target)
    sol = ocp.solve(prob)
    assert sol.converged
    U_bad = sol.U.copy()
    U_bad[5:, 0] = -80.0  # yank the left winch mid-flight
    rep = ocp.evaluate_constraints(U_bad, sol.X, sol.t_f, prob)
    assert rep.state_mismatch > 1e-6  # supplied knots no longer match
    assert rep.max_violation > 1e-3


def test_constraint_report_trivial_cases(flat_setup):
    target = ocp.PatchTarget(centroid=(5.5, -13.5), half_extent=(0.5, 0.5))
    prob = make_problem(flat_setup, target)
    sol = ocp.solve(prob)
    rep = sol.report
    # trajectory stays outside the mesh: wall violation exactly zero
    assert rep.wall == 0.0
    # pure normal push satisfies cone and bounds
    nc = np.array([1.0, 0.0, 0.0])
    U = sol.U.copy()
    U[0, 2:] = PARAMS.f_leg_max * nc
    rep2 = ocp.evaluate_constraints(U, ocp.rollout_knots(prob, U, sol.t_f), sol.t_f, prob)
    assert rep2.cone == 0.0
    assert rep2.leg_norm <= 1e-9
    assert rep2.leg_unilateral == 0.0


def test_problem_rejects_liftoff_inside_mesh(flat_setup):
    hm, cm = flat_setup
    p0 = np.array([-0.5, 5.0, -10.0])  # half a meter inside the wall
    x0 = np.concatenate([dyn.inverse_kinematics(p0, PARAMS), np.zeros(3)])
    from wallhopper.errors import ConfigError

    with pytest.raises(ConfigError, match="inside the mesh"):
        ocp.JumpProblem(
            x0=x0,
            target=ocp.GoalTarget(point=(0.05, 5.0, -12.0)),
            terrain=hm,
            costmap=cm,
            params=PARAMS,
        )
