"""Single-shooting trajectory optimization for one jump.

Decision variables: the N x 5 control knots (two rope-force magnitudes plus a
three-component leg force, held zero-order over each knot interval) and the
jump duration t_f.  The solver is an augmented-Lagrangian outer loop around a
bounded quasi-Newton subsolver (L-BFGS-B); gradients come from a forward
sensitivity rollout.  Box bounds carry the pure variable limits (rope force
sign and magnitude, leg magnitude per axis, duration window); everything
else (wall clearance, landing, friction cone, ...) enters the merit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _kernels, _shooting
from .costmap import CostMap, landing_cost
from .dynamics import (
    RobotParams,
    cartesian_velocity,
    fk_jacobian,
    forward_kinematics,
    rollout_detailed,
)
from .errors import ConfigError
from .terrain import HeightMap, interpolate, surface_sample


@dataclass(frozen=True)
class PatchTarget:
    """Land anywhere inside a rectangular patch, consistent with the mesh."""

    centroid: tuple  # (Y, Z) meters
    half_extent: tuple  # (dy/2, dz/2) meters


@dataclass(frozen=True)
class GoalTarget:
    """Land inside a ball around the final goal point."""

    point: tuple  # (X, Y, Z) meters
    tolerance: float = 0.05


@dataclass(frozen=True)
class JumpProblem:
    x0: np.ndarray
    target: object  # PatchTarget | GoalTarget
    terrain: HeightMap
    costmap: CostMap
    params: RobotParams = field(default_factory=RobotParams)
    N: int = 30
    n_sub: int = 5
    clearance: float = 0.5
    w_s: float = 0.001
    w_hw: float = 0.0
    w_l: float = 1000.0
    eps_land: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if not isinstance(self.target, (PatchTarget, GoalTarget)):
            raise ConfigError(f"target must be PatchTarget or GoalTarget, got {type(self.target)}")
        p0 = forward_kinematics(self.x0[:3], self.params)
        if self.terrain.in_extent(p0[1], p0[2]):
            mesh = interpolate(self.terrain, p0[1], p0[2])
            if p0[0] < mesh - 1e-3:
                raise ConfigError(
                    f"lift-off point {p0} lies {mesh - p0[0]:.4f} m inside the mesh"
                )


@dataclass
class SolverConfig:
    tol_feas: float = 1e-4
    tol_opt: float = 1e-4
    max_inner: int = 300
    max_outer: int = 10
    rho0: float = 10.0
    rho_growth: float = 7.0
    rho_max: float = 1e8
    rho_stall: float = 5e4
    wall_margin: float = 5e-3
    rad_min: float = 1e-3
    l_min: float = 0.05
    t_f_min: float = 0.2
    t_f_max: float = 20.0
    delta: float = 1e-6
    len_scale: float = 1.0
    subsolver_gtol: float = 1e-6
    stall_window: int = 3
    stall_factor: float = 0.5
    # deterministic restart schedule, tried in order until an attempt
    # converges: (duration multiplier, rope initialization).  "zero" is the
    # plain initial guess; "hold" starts from the static gravity-balance rope
    # forces, which keeps the first rollout near the lift-off point instead
    # of overshooting in free fall
    restarts: tuple = ((1.0, "zero"), (1.0, "hold"), (0.5, "hold"), (0.35, "hold"))
    # skip trailing restarts once three attempts all end this far from
    # feasibility (the target is considered unreachable)
    hopeless_violation: float = 2.0


@dataclass(frozen=True)
class ViolationReport:
    """Per-family maximum constraint violations in natural units (m, N)."""

    wall: float
    domain: float
    rope_length: float
    clearance: float
    landing_box: float
    landing_mesh: float
    goal: float
    rope_sign: float
    rope_bounds: float
    rope_min_tension: float
    leg_norm: float
    leg_unilateral: float
    cone: float
    state_mismatch: float
    landing_in_extent: bool

    @property
    def max_violation(self) -> float:
        return max(
            self.wall,
            self.domain,
            self.rope_length,
            self.clearance,
            self.landing_box,
            self.landing_mesh,
            self.goal,
            self.rope_sign,
            self.rope_bounds,
            self.rope_min_tension,
            self.leg_norm,
            self.leg_unilateral,
            self.cone,
        )

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "wall", "domain", "rope_length", "clearance", "landing_box",
            "landing_mesh", "goal", "rope_sign", "rope_bounds",
            "rope_min_tension", "leg_norm", "leg_unilateral", "cone",
            "state_mismatch",
        )}
        d["max_violation"] = self.max_violation
        return d


@dataclass
class JumpSolution:
    U: np.ndarray
    t_f: float
    X: np.ndarray
    converged: bool
    max_violation: float
    objective: float
    c_e: float
    landing_point: np.ndarray
    landing_cost: float
    report: ViolationReport
    diagnostics: dict = field(default_factory=dict)


def contact_frame(problem: JumpProblem):
    """Outward normal, tangents and surface point at the lift-off location."""
    p0 = forward_kinematics(problem.x0[:3], problem.params)
    y0 = float(np.clip(p0[1], problem.terrain.origin_y, problem.terrain.y_max))
    z0 = float(np.clip(p0[2], problem.terrain.origin_z, problem.terrain.z_max))
    samp = surface_sample(problem.terrain, y0, z0)
    nc = samp.normal
    ey = np.array([0.0, 1.0, 0.0])
    t_x = ey - (ey @ nc) * nc
    t_x /= np.linalg.norm(t_x)
    t_y = np.cross(nc, t_x)
    p_surf = np.array([samp.height, y0, z0])
    return nc, t_x, t_y, p_surf


def initial_guess(problem: JumpProblem):
    """Rope forces zero, leg impulse at full magnitude along the contact
    normal, duration from the pendulum period about the anchor midpoint."""
    params = problem.params
    p0 = forward_kinematics(problem.x0[:3], params)
    mid = 0.5 * (np.asarray(params.p_al) + np.asarray(params.p_ar))
    l_eq = float(np.linalg.norm(p0 - mid))
    g_mag = float(np.linalg.norm(params.g_vec))
    t_f0 = 2.0 * np.pi * np.sqrt(l_eq / g_mag)
    U0 = np.zeros((problem.N, 5))
    nc, _, _, _ = contact_frame(problem)
    U0[0, 2:] = params.f_leg_max * nc
    return U0, t_f0


def hold_guess(problem: JumpProblem):
    """Initial controls with rope forces at the static gravity balance.

    The two-force balance along the rope axes is solved in least squares and
    clipped into the admissible force box; the leg impulse matches the plain
    initial guess.
    """
    params = problem.params
    U0, t_f0 = initial_guess(problem)
    p0 = forward_kinematics(problem.x0[:3], params)
    al = p0 - np.asarray(params.p_al)
    ar = p0 - np.asarray(params.p_ar)
    A = np.column_stack([al / np.linalg.norm(al), ar / np.linalg.norm(ar)])
    f, *_ = np.linalg.lstsq(A, -params.m * params.g_vec, rcond=None)
    f = np.clip(f, -params.f_r_max, -params.f_r_min if params.f_r_min > 0 else 0.0)
    U0[:, 0] = f[0]
    U0[:, 1] = f[1]
    return U0, t_f0


def thrust_overlaps(t_f: float, N: int, t_th: float) -> np.ndarray:
    """Seconds of thrust window covered by each knot interval."""
    ts = t_f / N
    k = np.arange(N)
    return np.clip(np.minimum((k + 1) * ts, t_th) - k * ts, 0.0, None)


def energy(U, X, t_f: float, params: RobotParams) -> float:
    """Consumed energy: exact hoist work plus the kinetic energy the leg
    impulse imparts from standstill."""
    U = np.asarray(U, dtype=float)
    X = np.asarray(X, dtype=float)
    N = U.shape[0]
    ts = t_f / N
    hoist = 0.0
    for i in range(2):
        hoist += float(np.sum(np.abs(U[:, i] * X[:N, 4 + i])) * ts)
    ov = thrust_overlaps(t_f, N, params.t_th)
    dv = (U[:, 2:] * ov[:, None]).sum(axis=0) / params.m
    thrust = 0.5 * params.m * float(dv @ dv)
    return hoist + thrust


def objective(U, X, t_f: float, problem: JumpProblem) -> float:
    """Force-smoothing + hoist-work + landing-cost objective (smoothed |.|)."""
    U = np.asarray(U, dtype=float)
    X = np.asarray(X, dtype=float)
    N = U.shape[0]
    ts = t_f / N
    delta = 1e-6
    val = 0.0
    for i in range(2):
        f = U[:, i]
        d = np.diff(np.concatenate([[0.0], f]))
        val += problem.w_s * float(d @ d)
        if problem.w_hw != 0.0:
            v = f * X[:N, 4 + i]
            val += problem.w_hw * float(np.sum(np.sqrt(v * v + delta * delta)) * ts)
    pN = forward_kinematics(X[N][:3], problem.params)
    val += problem.w_l * landing_cost(problem.costmap, pN[1], pN[2])
    return val


def _mesh_height_clamped(hm: HeightMap, y: float, z: float) -> float:
    y = float(np.clip(y, hm.origin_y, hm.y_max))
    z = float(np.clip(z, hm.origin_z, hm.z_max))
    return interpolate(hm, y, z)


def evaluate_constraints(U, X, t_f: float, problem: JumpProblem) -> ViolationReport:
    """Independent audit of every path constraint, in natural units.

    Re-integrates the controls (wall checks cover every sub-step state) and
    cross-checks the supplied knot states against the fresh rollout.
    """
    U = np.asarray(U, dtype=float)
    X = np.asarray(X, dtype=float)
    params = problem.params
    res = rollout_detailed(problem.x0, U, t_f, problem.n_sub, params, check=False)
    mismatch = float(np.max(np.abs(res.knots - X))) if X.shape == res.knots.shape else np.inf

    nc, t_x, t_y, p_surf = contact_frame(problem)
    subs = res.sub_states
    pos = np.empty((subs.shape[0], 3))
    for i, xs in enumerate(subs):
        pos[i] = forward_kinematics_nocheck(xs, params)
    mesh_h = np.array([_mesh_height_clamped(problem.terrain, p[1], p[2]) for p in pos])
    wall = float(np.max(mesh_h - pos[:, 0]))

    domain = float(max(0.0, _kRAD_VALID - res.min_radicand))
    rope_len = float(np.max(np.clip(0.05 - subs[:, 1:3], 0.0, None)))

    mid_row = res.knot_rows[problem.N // 2]
    dist = float(nc @ (pos[mid_row] - p_surf))
    clearance = max(0.0, problem.clearance - dist)

    pN = pos[res.knot_rows[problem.N]]
    landing_box = 0.0
    landing_mesh = 0.0
    goal = 0.0
    if isinstance(problem.target, PatchTarget):
        cy, cz = problem.target.centroid
        hy, hz = problem.target.half_extent
        landing_box = max(0.0, abs(pN[1] - cy) - hy, abs(pN[2] - cz) - hz)
        landing_mesh = max(
            0.0, abs(pN[0] - _mesh_height_clamped(problem.terrain, pN[1], pN[2])) - problem.eps_land
        )
    else:
        goal = max(0.0, float(np.linalg.norm(pN - np.asarray(problem.target.point))) - problem.target.tolerance)

    rope_sign = float(max(0.0, U[:, :2].max()))
    rope_bounds = float(max(0.0, (-U[:, :2]).max() - params.f_r_max))
    rope_min_tension = 0.0
    if params.f_r_min > 0 and problem.N > 1:
        rope_min_tension = float(max(0.0, (U[1:, :2] + params.f_r_min).max()))

    fl = U[0, 2:]
    leg_norm = max(0.0, float(np.linalg.norm(fl)) - params.f_leg_max)
    ndot = float(nc @ fl)
    leg_unilateral = max(0.0, -ndot)
    cone = max(0.0, float(np.hypot(t_x @ fl, t_y @ fl)) - params.mu * ndot)

    in_extent = problem.terrain.in_extent(pN[1], pN[2])
    return ViolationReport(
        wall=max(0.0, wall),
        domain=domain,
        rope_length=rope_len,
        clearance=clearance,
        landing_box=landing_box,
        landing_mesh=landing_mesh,
        goal=goal,
        rope_sign=rope_sign,
        rope_bounds=rope_bounds,
        rope_min_tension=rope_min_tension,
        leg_norm=leg_norm,
        leg_unilateral=leg_unilateral,
        cone=cone,
        state_mismatch=mismatch,
        landing_in_extent=bool(in_extent),
    )


def forward_kinematics_nocheck(x, params: RobotParams) -> np.ndarray:
    px, py, pz, _ = _kernels.fk_point(float(x[0]), float(x[1]), float(x[2]), params.d_a)
    return np.array([px, py, pz])


_kRAD_VALID = _kernels.RAD_VALID


def _pack_target(problem: JumpProblem):
    if isinstance(problem.target, PatchTarget):
        cy, cz = problem.target.centroid
        hy, hz = problem.target.half_extent
        return 0, np.array([cy, cz, hy, hz, problem.eps_land])
    pf = np.asarray(problem.target.point, dtype=float)
    return 1, np.array([pf[0], pf[1], pf[2], problem.target.tolerance, 0.0])


def _kernel_args(problem: JumpProblem, config: SolverConfig):
    params = problem.params
    g = params.g_vec
    nc, t_x, t_y, p_surf = contact_frame(problem)
    mode, target = _pack_target(problem)
    return dict(
        x0=problem.x0.astype(float),
        N=problem.N,
        n_sub=problem.n_sub,
        cutoff=params.t_th,
        m=params.m,
        da=params.d_a,
        gx=g[0],
        gy=g[1],
        gz=g[2],
        mesh=np.ascontiguousarray(problem.terrain.depth),
        mesh_oy=problem.terrain.origin_y,
        mesh_oz=problem.terrain.origin_z,
        mesh_res=problem.terrain.resolution,
        cost=np.ascontiguousarray(problem.costmap.cost),
        cost_oy=problem.costmap.origin_y,
        cost_oz=problem.costmap.origin_z,
        cost_res=problem.costmap.resolution,
        target_mode=mode,
        target=target,
        nc=nc,
        tx=t_x,
        ty=t_y,
        p_surf=p_surf,
        h_clear=problem.clearance,
        w_s=problem.w_s,
        w_hw=problem.w_hw,
        w_l=problem.w_l,
        delta=config.delta,
        wall_margin=config.wall_margin,
        rad_min_c=config.rad_min,
        l_min=config.l_min,
        mu=params.mu,
        f_leg_max=params.f_leg_max,
        len_scale=config.len_scale,
        force_scale=params.f_leg_max,
    )


def objective_gradient(U, t_f: float, problem: JumpProblem, config: SolverConfig | None = None):
    """Objective value and gradient w.r.t. (U flattened, t_f), physical units."""
    config = config or SolverConfig()
    ka = _kernel_args(problem, config)
    ntheta = 5 * problem.N + 1
    scales = np.ones(ntheta)
    theta = np.concatenate([np.asarray(U, dtype=float).ravel(), [t_f]])
    lam = np.zeros(_shooting.n_constraints(1 + (problem.N + 1) * problem.n_sub))
    val, grad, _, obj, _ = _shooting.merit_and_grad(
        theta, scales, lam=lam, rho=0.0, want_grad=1, **ka
    )
    return obj, grad


def _bounds_and_scales(problem: JumpProblem, config: SolverConfig, t_f0: float):
    params = problem.params
    N = problem.N
    ntheta = 5 * N + 1
    scales = np.empty(ntheta)
    lo = np.empty(ntheta)
    hi = np.empty(ntheta)
    s_rope = params.f_r_max if params.f_r_max > 0 else 1.0
    for k in range(N):
        b = 5 * k
        scales[b : b + 2] = s_rope
        scales[b + 2 : b + 5] = params.f_leg_max
        lo[b : b + 2] = -params.f_r_max / s_rope
        # knot 0 covers the thrust window; the taut-rope minimum tension
        # applies to the flight knots after lift-off
        if k == 0:
            hi[b : b + 2] = 0.0
        else:
            hi[b : b + 2] = -params.f_r_min / s_rope
        if k == 0:
            lo[b + 2 : b + 5] = -1.0
            hi[b + 2 : b + 5] = 1.0
        else:
            lo[b + 2 : b + 5] = 0.0
            hi[b + 2 : b + 5] = 0.0
    scales[-1] = t_f0
    lo[-1] = config.t_f_min / t_f0
    hi[-1] = config.t_f_max / t_f0
    return scales, lo, hi


def solve(problem: JumpProblem, config: SolverConfig | None = None, seed: int = 0) -> JumpSolution:
    """Solve one jump; never raises on non-convergence (seed reserved for
    future stochastic restarts, the solver itself is deterministic).

    Runs a fixed restart schedule over the duration initialization and keeps
    the first converged attempt (or the least-infeasible one).
    """
    config = config or SolverConfig()
    ka = _kernel_args(problem, config)
    U0_zero, t_f0 = initial_guess(problem)
    U0_hold = None
    best = None
    attempts = 0
    for mult, kind in config.restarts:
        attempts += 1
        if kind == "hold":
            if U0_hold is None:
                U0_hold, _ = hold_guess(problem)
            U0 = U0_hold
        else:
            U0 = U0_zero
        sol = _solve_attempt(problem, config, ka, U0, t_f0 * mult)
        if best is None or (sol.converged and not best.converged) or (
            not best.converged and not sol.converged
            and sol.max_violation < best.max_violation
        ):
            best = sol
        if best.converged:
            break
        if attempts >= 3 and best.max_violation > config.hopeless_violation:
            break
    best.diagnostics["attempts"] = attempts
    best.diagnostics["t_f_init"] = t_f0
    return best


def _solve_attempt(
    problem: JumpProblem, config: SolverConfig, ka: dict, U0: np.ndarray, t_f0: float
) -> JumpSolution:
    params = problem.params
    scales, lo, hi = _bounds_and_scales(problem, config, t_f0)
    theta = np.concatenate([U0.ravel(), [t_f0]]) / scales
    theta = np.clip(theta, lo, hi)
    bounds = list(zip(lo, hi))

    n_states = 1 + (problem.N + 1) * problem.n_sub
    n_con = _shooting.n_constraints(n_states)
    lam = np.zeros(n_con)
    rho = config.rho0

    def fun(th, lam_, rho_):
        val, grad, _, _, _ = _shooting.merit_and_grad(
            th, scales, lam=lam_, rho=rho_, want_grad=1, **ka
        )
        if not np.isfinite(val):
            return 1e30, np.zeros_like(grad)
        if not np.isfinite(grad).all():
            grad = np.where(np.isfinite(grad), grad, 0.0)
        return val, grad

    def projgrad(g, th):
        pg_vec = g.copy()
        at_lo = (th <= lo + 1e-12) & (pg_vec > 0)
        at_hi = (th >= hi - 1e-12) & (pg_vec < 0)
        pg_vec[at_lo | at_hi] = 0.0
        return float(np.max(np.abs(pg_vec)))

    viol_hist = []
    n_iters = 0
    converged = False
    best_viol = np.inf
    best_theta = theta.copy()
    best_lam = lam.copy()

    def subsolve(th, lam_, rho_):
        # trust window on the duration: one subsolve may at most halve or
        # double it, so a single bad gradient cannot collapse the horizon
        t_cur = th[-1] * scales[-1]
        bounds[-1] = (
            max(lo[-1], 0.5 * t_cur / scales[-1]),
            min(hi[-1], 2.0 * t_cur / scales[-1]),
        )
        return minimize(
            fun,
            th,
            args=(lam_, rho_),
            method="L-BFGS-B",
            jac=True,
            bounds=bounds,
            options=dict(
                maxiter=config.max_inner, ftol=1e-12, gtol=config.subsolver_gtol, maxcor=25
            ),
        )

    def update_multipliers(lam_, c, rho_):
        lam_new = np.maximum(0.0, lam_ + rho_ * c)
        # complementarity cleanup: clearly-inactive constraints carry no
        # multiplier (stale values otherwise distort later subproblems)
        lam_new[c < -0.05] = 0.0
        return lam_new

    clean_exit = False
    for outer in range(config.max_outer):
        res = subsolve(theta, lam, rho)
        theta = res.x
        n_iters += res.nit
        # status 0: gradient/progress tolerance met; status 2: the line
        # search cannot improve the point any further (stall at precision)
        clean_exit = res.status in (0, 2)
        _, _, c, obj, _ = _shooting.merit_and_grad(
            theta, scales, lam=lam, rho=rho, want_grad=0, **ka
        )
        U = (theta[:-1] * scales[:-1]).reshape(problem.N, 5)
        t_f = float(theta[-1] * scales[-1])
        report = evaluate_constraints(U, rollout_knots(problem, U, t_f), t_f, problem)
        viol = report.max_violation
        viol_hist.append(viol)
        if viol > max(4.0 * best_viol, config.tol_feas):
            # safeguard: a multiplier update destabilized the subproblem;
            # restart from the best iterate with a stiffer penalty
            theta = best_theta.copy()
            lam = best_lam.copy()
            rho = min(rho * config.rho_growth, config.rho_max)
            continue
        lam_new = update_multipliers(lam, c, rho)
        if viol < best_viol:
            best_viol = viol
            best_theta = theta.copy()
            best_lam = lam_new.copy()
        # converged: feasible, and the subsolver certified first-order
        # stationarity of the merit by its own exit test (gradient or
        # progress tolerance reached, not the iteration cap)
        if viol <= config.tol_feas and clean_exit:
            converged = True
            break
        lam = lam_new
        if viol > config.tol_feas and viol > 0.25 * viol_hist[max(0, len(viol_hist) - 2)]:
            rho = min(rho * config.rho_growth, config.rho_max)
        # bail out of hopeless problems: stuck far from feasibility with the
        # penalty already saturated
        w = config.stall_window
        if (
            len(viol_hist) > w
            and viol > 1e3 * config.tol_feas
            and viol > config.stall_factor * viol_hist[-1 - w]
            and rho >= config.rho_stall
        ):
            break

    if not converged and best_viol <= 10.0 * config.tol_feas:
        # feasibility was (nearly) reached but the rounds ran out: one clean
        # polish pass from the best iterate at the reference penalty
        theta = best_theta.copy()
        _, _, c, _, _ = _shooting.merit_and_grad(
            theta, scales, lam=best_lam, rho=config.rho0, want_grad=0, **ka
        )
        lam = update_multipliers(best_lam, c, config.rho0)
        res = subsolve(theta, lam, config.rho0)
        n_iters += res.nit
        theta_p = res.x
        U = (theta_p[:-1] * scales[:-1]).reshape(problem.N, 5)
        t_f = float(theta_p[-1] * scales[-1])
        report = evaluate_constraints(U, rollout_knots(problem, U, t_f), t_f, problem)
        if report.max_violation <= config.tol_feas:
            theta = theta_p
            best_viol = report.max_violation
            converged = res.status in (0, 2)
        viol_hist.append(report.max_violation)
    elif not converged and best_viol < np.inf:
        theta = best_theta

    # final stationarity residual, reported for transparency
    _, _, c_fin, _, _ = _shooting.merit_and_grad(
        theta, scales, lam=lam, rho=config.rho0, want_grad=0, **ka
    )
    lam_fin = update_multipliers(lam, c_fin, config.rho0)
    _, g_fin, _, _, _ = _shooting.merit_and_grad(
        theta, scales, lam=lam_fin, rho=config.rho0, want_grad=1, **ka
    )
    pg = projgrad(g_fin, theta)
    U = (theta[:-1] * scales[:-1]).reshape(problem.N, 5)
    t_f = float(theta[-1] * scales[-1])
    X = rollout_knots(problem, U, t_f)
    report = evaluate_constraints(U, X, t_f, problem)
    pN = forward_kinematics_nocheck(X[-1], params)
    sol = JumpSolution(
        U=U,
        t_f=t_f,
        X=X,
        converged=converged and report.max_violation <= config.tol_feas,
        max_violation=report.max_violation,
        objective=objective(U, X, t_f, problem),
        c_e=energy(U, X, t_f, params),
        landing_point=pN,
        landing_cost=landing_cost(problem.costmap, pN[1], pN[2]),
        report=report,
        diagnostics=dict(
            outer_rounds=len(viol_hist),
            subsolver_iters=n_iters,
            projected_gradient=pg,
            violation_history=viol_hist,
            rho=rho,
        ),
    )
    return sol


def rollout_knots(problem: JumpProblem, U, t_f: float) -> np.ndarray:
    return rollout_detailed(
        problem.x0, U, t_f, problem.n_sub, problem.params, check=False
    ).knots
