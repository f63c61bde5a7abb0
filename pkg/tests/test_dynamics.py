import numpy as np
import pytest

from wallhopper import dynamics as dyn
from wallhopper.errors import DomainError, RolloutError

PARAMS = dyn.RobotParams()


def random_valid_states(n, seed=0, with_rates=False):
    """Sample reduced states via IK over a sane Cartesian workspace box."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        p = np.array(
            [rng.uniform(0.2, 6.0), rng.uniform(1.0, 9.0), rng.uniform(-15.0, -2.0)]
        )
        q = dyn.inverse_kinematics(p, PARAMS)
        if with_rates:
            qd = rng.uniform(-1.5, 1.5, 3)
            out.append(np.concatenate([q, qd]))
        else:
            out.append(q)
    return out


def test_fk_symmetric_case():
    p = dyn.forward_kinematics(np.array([0.0, 10.0, 10.0]), PARAMS)
    assert p == pytest.approx([0.0, 5.0, -8.6603], abs=1e-4)


def test_fk_quarter_turn():
    p = dyn.forward_kinematics(np.array([np.pi / 2, 10.0, 10.0]), PARAMS)
    assert p == pytest.approx([8.6603, 5.0, 0.0], abs=1e-4)


def test_rope_length_consistency():
    for q in random_valid_states(200, seed=3):
        p = dyn.forward_kinematics(q, PARAMS)
        assert abs(np.linalg.norm(p - np.asarray(PARAMS.p_al)) - q[1]) < 1e-9
        assert abs(np.linalg.norm(p - np.asarray(PARAMS.p_ar)) - q[2]) < 1e-9


def test_ik_of_symmetric_point():
    q = dyn.inverse_kinematics(np.array([0.0, 5.0, -8.66025404]), PARAMS)
    assert q == pytest.approx([0.0, 10.0, 10.0], abs=1e-7)


def test_ik_fk_roundtrip():
    worst = 0.0
    for q in random_valid_states(1000, seed=7):
        p = dyn.forward_kinematics(q, PARAMS)
        q2 = dyn.inverse_kinematics(p, PARAMS)
        worst = max(worst, float(np.max(np.abs(q - q2))))
    assert worst < 1e-9


def test_ik_rejects_anchor_axis_point():
    with pytest.raises(DomainError):
        dyn.inverse_kinematics(np.array([0.0, 5.0, 0.0]), PARAMS)


def test_fk_rejects_degenerate_triangle():
    with pytest.raises(DomainError):
        dyn.forward_kinematics(np.array([0.1, 3.0, 20.0]), PARAMS)


def test_rope_axes():
    p = np.array([0.0, 5.0, -8.6603])
    al, ar = dyn.rope_axes(p, PARAMS)
    assert al == pytest.approx([0.0, 0.5, -0.86603], abs=1e-5)
    assert ar == pytest.approx([0.0, -0.5, -0.86603], abs=1e-5)
    rng = np.random.default_rng(0)
    for q in random_valid_states(50, seed=9):
        p = dyn.forward_kinematics(q, PARAMS)
        al, ar = dyn.rope_axes(p, PARAMS)
        assert abs(np.linalg.norm(al) - 1.0) < 1e-12
        assert abs(np.linalg.norm(ar) - 1.0) < 1e-12


def test_jacobian_matches_finite_differences():
    for q in random_valid_states(50, seed=11):
        J = dyn.fk_jacobian(q, PARAMS)
        Jfd = np.empty((3, 3))
        for j in range(3):
            h = 1e-7 * (1 + abs(q[j]))
            dq = np.zeros(3)
            dq[j] = h
            Jfd[:, j] = (
                dyn.forward_kinematics(q + dq, PARAMS) - dyn.forward_kinematics(q - dq, PARAMS)
            ) / (2 * h)
        assert np.max(np.abs(J - Jfd)) < 1e-6


def test_rate_bias_matches_finite_differences():
    rng = np.random.default_rng(13)
    for q in random_valid_states(50, seed=13):
        qd = rng.uniform(-2, 2, 3)
        b = dyn.fk_rate_bias(q, qd, PARAMS)
        eps = 1e-7
        Jp = dyn.fk_jacobian(q + eps * qd, PARAMS)
        Jm = dyn.fk_jacobian(q - eps * qd, PARAMS)
        bfd = (Jp - Jm) / (2 * eps) @ qd
        assert np.max(np.abs(b - bfd)) < 1e-5


def test_static_hang_equilibrium():
    # at psi = 0 gravity lies in the rope plane: solve the 2-force balance
    # along the rope axes and check the resulting accelerations vanish
    q = np.array([0.0, 10.0, 10.0])
    p = dyn.forward_kinematics(q, PARAMS)
    al, ar = dyn.rope_axes(p, PARAMS)
    A = np.column_stack([al, ar])[1:, :]  # x components are zero at psi = 0
    f = np.linalg.solve(A, -PARAMS.m * PARAMS.g_vec[1:])
    assert np.all(f < 0)  # tensions pull toward the anchors
    u = np.array([f[0], f[1], 0.0, 0.0, 0.0])
    xdot = dyn.dynamics(np.concatenate([q, np.zeros(3)]), u, PARAMS)
    assert np.max(np.abs(xdot[3:])) < 1e-8


def test_symmetric_start_symmetric_accel():
    x = np.array([0.4, 10.0, 10.0, 0.0, 0.0, 0.0])
    xdot = dyn.dynamics(x, np.zeros(5), PARAMS)
    assert xdot[4] == pytest.approx(xdot[5], abs=1e-10)


def test_newton_consistency_random():
    rng = np.random.default_rng(17)
    worst = 0.0
    for x in random_valid_states(1000, seed=17, with_rates=True):
        u = np.array(
            [
                rng.uniform(-80, 0),
                rng.uniform(-80, 0),
                rng.uniform(-300, 300),
                rng.uniform(-300, 300),
                rng.uniform(-300, 300),
            ]
        )
        xdot = dyn.dynamics(x, u, PARAMS)
        q, qd, qdd = x[:3], x[3:], xdot[3:]
        J = dyn.fk_jacobian(q, PARAMS)
        b = dyn.fk_rate_bias(q, qd, PARAMS)
        pdd = J @ qdd + b
        pos = dyn.forward_kinematics(q, PARAMS)
        al, ar = dyn.rope_axes(pos, PARAMS)
        ftot = al * u[0] + ar * u[1] + u[2:]
        res = PARAMS.m * (pdd - PARAMS.g_vec) - ftot
        worst = max(worst, float(np.max(np.abs(res))))
    assert worst < 1e-6


def mech_energy(x):
    v = dyn.cartesian_velocity(x, PARAMS)
    pos = dyn.forward_kinematics(x[:3], PARAMS)
    return 0.5 * PARAMS.m * float(v @ v) + PARAMS.m * 9.81 * pos[2]


def test_zero_gravity_rest_state_constant():
    params0 = dyn.RobotParams(g=(0.0, 0.0, 0.0))
    x0 = np.array([0.3, 10.0, 10.0, 0.0, 0.0, 0.0])
    X = dyn.rk4_rollout(x0, np.zeros((20, 5)), 2.0, 5, params0, thrust_cutoff=np.inf)
    assert np.allclose(X, x0, atol=1e-14)


def test_unactuated_energy_conservation():
    x0 = np.array([0.3, 10.0, 10.0, 0.0, 0.0, 0.0])
    # dt = 2 s / (400 * 5) = 1e-3
    X = dyn.rk4_rollout(x0, np.zeros((400, 5)), 2.0, 5, PARAMS, thrust_cutoff=np.inf)
    E0 = mech_energy(x0)
    drift = max(abs(mech_energy(X[k]) - E0) for k in (100, 200, 300, 400))
    assert drift / abs(E0) < 1e-6


def test_rk4_fourth_order_convergence():
    x0 = np.array([0.3, 10.0, 10.0, 0.0, 0.0, 0.0])
    t_f = 2.0
    ref = dyn.rk4_rollout(x0, np.zeros((100, 5)), t_f, 2000, PARAMS, thrust_cutoff=np.inf)[-1]
    errs = []
    for n_sub in (2, 4):  # dt = 0.01 then 0.005
        X = dyn.rk4_rollout(x0, np.zeros((100, 5)), t_f, n_sub, PARAMS, thrust_cutoff=np.inf)
        errs.append(float(np.linalg.norm(X[-1] - ref)))
    ratio = errs[0] / errs[1]
    assert 12.0 < ratio < 20.0


def test_rollout_reports_failing_knot():
    # strong winch-in on one rope collapses the triangle eventually
    x0 = np.array([0.0, 10.0, 10.0, 0.0, 0.0, 0.0])
    U = np.zeros((30, 5))
    U[:, 0] = -2000.0
    with pytest.raises(RolloutError) as exc:
        dyn.rk4_rollout(x0, U, 6.0, 5, PARAMS, thrust_cutoff=np.inf)
    assert exc.value.knot >= 0


def test_thrust_cutoff_limits_leg_impulse():
    # same leg force, horizon long enough that the cutoff halves the impulse
    x0 = np.array([0.01, 10.0, 10.0, 0.0, 0.0, 0.0])
    U = np.zeros((10, 5))
    U[0, 2] = 200.0
    res_cut = dyn.rollout_detailed(x0, U, 1.0, 5, PARAMS)  # cutoff t_th = 0.05
    res_full = dyn.rollout_detailed(x0, U, 1.0, 5, PARAMS, thrust_cutoff=np.inf)
    v_cut = dyn.cartesian_velocity(res_cut.state_at_cutoff, PARAMS)
    # impulse f * t_th / m, gravity correction is along z
    assert v_cut[0] == pytest.approx(200.0 * 0.05 / PARAMS.m, rel=0.05)
    # without the cutoff the leg pushes 2x longer (0.1 s interval)
    v_full = dyn.cartesian_velocity(res_full.knots[1], PARAMS)
    assert v_full[0] > 1.5 * v_cut[0]


def test_params_validation():
    with pytest.raises(ValueError):
        dyn.RobotParams(m=-1.0)
    with pytest.raises(ValueError):
        dyn.RobotParams(p_ar=(0.0, -10.0, 0.0))
    with pytest.raises(ValueError):
        dyn.RobotParams(f_r_min=50.0, f_r_max=10.0)
