"""Reduced-order model of a point mass suspended on two winch-driven ropes.

Generalized coordinates q = (psi, l1, l2): the angle between the rope plane
and the vertical plane through the anchors, and the two rope lengths.  The
state is x = (q, qdot) in R^6, controls are u = (f_rl, f_rr, f_leg) in R^5
with rope force magnitudes non-positive (ropes pull) and a leg force applied
only during the short thrust window at the start of a jump.

The equations of motion follow from Newton's law m(pdd - g) = f_total mapped
through the kinematics p(q): with A = dp/dq and b = (dA/dt) qdot,

    qdd = A^{-1} (g + f_total / m - b).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, RolloutError


@dataclass(frozen=True)
class RobotParams:
    """Physical constants of the robot and anchor rig (defaults: 5 kg platform)."""

    m: float = 5.0
    p_al: tuple = (0.0, 0.0, 0.0)
    p_ar: tuple = (0.0, 10.0, 0.0)
    g: tuple = (0.0, 0.0, -9.81)
    f_leg_max: float = 300.0
    f_r_min: float = 15.0
    f_r_max: float = 80.0
    mu: float = 0.8
    t_th: float = 0.05

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError(f"mass must be positive, got {self.m}")
        if any(abs(v) > 0 for v in self.p_al):
            raise ValueError("the world frame sits at the left anchor: p_al must be the origin")
        if abs(self.p_ar[0]) > 0 or abs(self.p_ar[2]) > 0 or self.p_ar[1] <= 0:
            raise ValueError("the right anchor must lie on the +Y axis: p_ar = (0, d_a, 0)")
        if not (0 <= self.f_r_min <= self.f_r_max):
            raise ValueError(f"need 0 <= f_r_min <= f_r_max, got {self.f_r_min}/{self.f_r_max}")
        if self.mu <= 0:
            raise ValueError(f"friction coefficient must be positive, got {self.mu}")
        if self.t_th <= 0:
            raise ValueError(f"thrust duration must be positive, got {self.t_th}")

    @property
    def d_a(self) -> float:
        return float(self.p_ar[1])

    @property
    def g_vec(self) -> np.ndarray:
        return np.asarray(self.g, dtype=float)


def state_radicand(q, params: RobotParams) -> float:
    """Normalized FK radicand; positive iff the rope triangle is non-degenerate."""
    _, l1, l2 = float(q[0]), float(q[1]), float(q[2])
    da = params.d_a
    c = (da * da + l1 * l1 - l2 * l2) / (2.0 * da)
    return (l1 * l1 - c * c) / (l1 * l1)


def check_state(q, params: RobotParams) -> None:
    if q[1] <= 0 or q[2] <= 0:
        raise DomainError(f"rope lengths must be positive, got l1={q[1]}, l2={q[2]}")
    rad = state_radicand(q, params)
    if rad <= _kernels.RAD_VALID:
        raise DomainError(
            f"degenerate rope triangle: normalized radicand {rad:.3e} <= {_kernels.RAD_VALID}"
        )


def forward_kinematics(q, params: RobotParams) -> np.ndarray:
    """Robot position from (psi, l1, l2) in the left-anchor world frame."""
    check_state(q, params)
    px, py, pz, _ = _kernels.fk_point(float(q[0]), float(q[1]), float(q[2]), params.d_a)
    return np.array([px, py, pz])


def inverse_kinematics(p, params: RobotParams) -> np.ndarray:
    """(psi, l1, l2) for a Cartesian position; inverse of forward_kinematics."""
    p = np.asarray(p, dtype=float)
    l1 = float(np.linalg.norm(p - np.asarray(params.p_al)))
    l2 = float(np.linalg.norm(p - np.asarray(params.p_ar)))
    if p[0] ** 2 + p[2] ** 2 < 1e-18:
        raise DomainError(f"point {p} lies on the anchor axis; psi undefined")
    psi = float(np.arctan2(p[0], -p[2]))
    q = np.array([psi, l1, l2])
    check_state(q, params)
    return q


def rope_axes(p, params: RobotParams):
    """Unit vectors from each anchor toward the robot."""
    p = np.asarray(p, dtype=float)
    dl = p - np.asarray(params.p_al)
    dr = p - np.asarray(params.p_ar)
    nl = np.linalg.norm(dl)
    nr = np.linalg.norm(dr)
    if nl < 1e-12 or nr < 1e-12:
        raise DomainError("robot position coincides with an anchor")
    return dl / nl, dr / nr


def fk_jacobian(q, params: RobotParams) -> np.ndarray:
    """A = dp/dq, the 3x3 kinematics Jacobian of Eq-level algebra."""
    check_state(q, params)
    J = np.empty((3, 3))
    _kernels.fk_jacobian_k(float(q[0]), float(q[1]), float(q[2]), params.d_a, J)
    return J


def fk_rate_bias(q, qdot, params: RobotParams) -> np.ndarray:
    """b = (dA/dt) qdot, the velocity-product term of the reduced dynamics."""
    check_state(q, params)
    x = np.array([q[0], q[1], q[2], qdot[0], qdot[1], qdot[2]], dtype=float)
    # b equals J qdd-free residual: evaluate accel with zero force and gravity
    # removed: A qdd = -b  =>  b = -A qdd.  Cheaper: reuse accel3 with g = 0,
    # u = 0, then b = -J qdd.
    qdd = np.empty(3)
    _kernels.accel3(x, np.zeros(5), params.m, params.d_a, 0.0, 0.0, 0.0, qdd)
    J = fk_jacobian(q, params)
    return -J @ qdd


def dynamics(x, u, params: RobotParams) -> np.ndarray:
    """State derivative xdot = (qdot, A^{-1}(g + f_total/m - b))."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    check_state(x[:3], params)
    g = params.g_vec
    out = np.empty(6)
    _kernels.xdot6(x, u, params.m, params.d_a, g[0], g[1], g[2], out)
    return out


@dataclass(frozen=True)
class RolloutResult:
    """Dense record of one shooting rollout."""

    knots: np.ndarray          # (N+1, 6) states at the knot grid
    sub_states: np.ndarray     # x0 plus the state after every RK4 sub-step
    knot_rows: np.ndarray      # row of each knot state within sub_states
    state_at_cutoff: np.ndarray  # state at the end of the thrust window
    min_radicand: float
    t_f: float
    n_sub: int


def rollout_detailed(
    x0,
    controls,
    t_f: float,
    n_sub: int,
    params: RobotParams,
    thrust_cutoff: float | None = None,
    check: bool = True,
) -> RolloutResult:
    """RK4 rollout keeping every sub-step state.

    ``thrust_cutoff`` defaults to params.t_th: leg-force components of the
    controls act only on integration times before the cutoff (the interval
    containing it is split exactly there).  Pass ``np.inf`` to hold every
    control component over its full knot interval.
    """
    x0 = np.asarray(x0, dtype=float)
    U = np.ascontiguousarray(controls, dtype=float)
    if U.ndim != 2 or U.shape[1] != 5:
        raise ValueError(f"controls must have shape (N, 5), got {U.shape}")
    if t_f <= 0:
        raise ValueError(f"t_f must be positive, got {t_f}")
    if check:
        check_state(x0[:3], params)
    cutoff = params.t_th if thrust_cutoff is None else float(thrust_cutoff)
    g = params.g_vec
    knots, subs, knot_rows, x_cut, min_rad, first_bad = _kernels.rollout_core(
        x0, U, float(t_f), int(n_sub), cutoff, params.m, params.d_a, g[0], g[1], g[2]
    )
    if check and first_bad >= 0:
        raise RolloutError(
            f"state left the valid domain during knot interval {first_bad} "
            f"(min normalized radicand {min_rad:.3e})",
            knot=int(first_bad),
        )
    return RolloutResult(
        knots=knots,
        sub_states=subs,
        knot_rows=knot_rows,
        state_at_cutoff=x_cut,
        min_radicand=float(min_rad),
        t_f=float(t_f),
        n_sub=int(n_sub),
    )


def rk4_rollout(
    x0,
    controls,
    t_f: float,
    n_sub: int,
    params: RobotParams,
    thrust_cutoff: float | None = None,
) -> np.ndarray:
    """Knot states (N+1, 6) of the RK4 rollout; raises RolloutError on domain exit."""
    return rollout_detailed(x0, controls, t_f, n_sub, params, thrust_cutoff=thrust_cutoff).knots


def cartesian_path(states, params: RobotParams) -> np.ndarray:
    """Map an array of reduced states (M, 6) to Cartesian positions (M, 3)."""
    states = np.asarray(states, dtype=float)
    out = np.empty((states.shape[0], 3))
    for i, x in enumerate(states):
        px, py, pz, _ = _kernels.fk_point(x[0], x[1], x[2], params.d_a)
        out[i] = (px, py, pz)
    return out


def cartesian_velocity(x, params: RobotParams) -> np.ndarray:
    """pdot = A qdot for one state."""
    J = fk_jacobian(x[:3], params)
    return J @ np.asarray(x[3:6], dtype=float)
