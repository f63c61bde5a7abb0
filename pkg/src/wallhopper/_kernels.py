"""Numba kernels shared by the dynamics module and the shooting optimizer.

State layout: x = (psi, l1, l2, dpsi, dl1, dl2).
Control layout: u = (f_rl, f_rr, fleg_x, fleg_y, fleg_z).

The forward kinematics places the robot at

    p = (rho sin psi, c, -rho cos psi),
    c = (da^2 + l1^2 - l2^2) / (2 da),   rho = sqrt(l1^2 - c^2),

in the left-anchor frame (Y toward the right anchor, Z up).  The normalized
radicand rho^2 / l1^2 must stay positive for the rope triangle to exist.
"""

import numpy as np
from numba import njit

# validity threshold on the normalized radicand rho^2 / l1^2
RAD_VALID = 1e-10
# clamps used by guarded evaluation so iterates never produce NaNs
RAD_CLAMP = 1e-8
DET_CLAMP = 1e-12
STATE_CLAMP = 1e6


@njit(cache=True)
def bilinear_clamped(grid, oy, oz, res, y, z):
    """Bilinear sample of a node grid with constant extension beyond the border.

    Returns (value, d/dy, d/dz); derivatives are the in-cell interpolant slopes
    and zero outside the extent.
    """
    nz, ny = grid.shape
    fy = (y - oy) / res
    fz = (z - oz) / res
    inside = True
    if fy < 0.0:
        fy = 0.0
        inside = False
    elif fy > ny - 1.0:
        fy = ny - 1.0
        inside = False
    if fz < 0.0:
        fz = 0.0
        inside = False
    elif fz > nz - 1.0:
        fz = nz - 1.0
        inside = False
    iy = int(fy)
    if iy > ny - 2:
        iy = ny - 2
    iz = int(fz)
    if iz > nz - 2:
        iz = nz - 2
    ty = fy - iy
    tz = fz - iz
    f00 = grid[iz, iy]
    f01 = grid[iz, iy + 1]
    f10 = grid[iz + 1, iy]
    f11 = grid[iz + 1, iy + 1]
    v = f00 * (1 - ty) * (1 - tz) + f01 * ty * (1 - tz) + f10 * (1 - ty) * tz + f11 * ty * tz
    if inside:
        dvdy = ((f01 - f00) * (1 - tz) + (f11 - f10) * tz) / res
        dvdz = ((f10 - f00) * (1 - ty) + (f11 - f01) * ty) / res
    else:
        dvdy = 0.0
        dvdz = 0.0
    return v, dvdy, dvdz


@njit(cache=True)
def fk_point(psi, l1, l2, da):
    """Position (px, py, pz) plus the normalized radicand."""
    if l1 < 1e-9:
        l1 = 1e-9
    if l2 < 1e-9:
        l2 = 1e-9
    c = (da * da + l1 * l1 - l2 * l2) / (2.0 * da)
    rad = l1 * l1 - c * c
    radnorm = rad / (l1 * l1)
    if rad < RAD_CLAMP * l1 * l1:
        rad = RAD_CLAMP * l1 * l1
    rho = np.sqrt(rad)
    s = np.sin(psi)
    co = np.cos(psi)
    return rho * s, c, -rho * co, radnorm


@njit(cache=True)
def fk_jacobian_k(psi, l1, l2, da, J):
    """Fill J (3x3) with dp/d(psi, l1, l2); returns (px, py, pz, radnorm)."""
    if l1 < 1e-9:
        l1 = 1e-9
    if l2 < 1e-9:
        l2 = 1e-9
    c = (da * da + l1 * l1 - l2 * l2) / (2.0 * da)
    rad = l1 * l1 - c * c
    radnorm = rad / (l1 * l1)
    if rad < RAD_CLAMP * l1 * l1:
        rad = RAD_CLAMP * l1 * l1
    rho = np.sqrt(rad)
    s = np.sin(psi)
    co = np.cos(psi)
    c1 = l1 / da
    c2 = -l2 / da
    rho1 = (l1 - c * c1) / rho
    rho2 = -(c * c2) / rho
    J[0, 0] = rho * co
    J[0, 1] = rho1 * s
    J[0, 2] = rho2 * s
    J[1, 0] = 0.0
    J[1, 1] = c1
    J[1, 2] = c2
    J[2, 0] = rho * s
    J[2, 1] = -rho1 * co
    J[2, 2] = -rho2 * co
    return rho * s, c, -rho * co, radnorm


@njit(cache=True)
def solve3(J, r, out):
    """Solve J @ out = r for a 3x3 system via the adjugate; clamps tiny determinants."""
    a = J[0, 0]
    b = J[0, 1]
    c = J[0, 2]
    d = J[1, 0]
    e = J[1, 1]
    f = J[1, 2]
    g = J[2, 0]
    h = J[2, 1]
    i = J[2, 2]
    A = e * i - f * h
    B = c * h - b * i
    C = b * f - c * e
    D = f * g - d * i
    E = a * i - c * g
    F = c * d - a * f
    G = d * h - e * g
    H = b * g - a * h
    I = a * e - b * d
    det = a * A + d * B + g * C
    if det >= 0.0 and det < DET_CLAMP:
        det = DET_CLAMP
    elif det < 0.0 and det > -DET_CLAMP:
        det = -DET_CLAMP
    out[0] = (A * r[0] + B * r[1] + C * r[2]) / det
    out[1] = (D * r[0] + E * r[1] + F * r[2]) / det
    out[2] = (G * r[0] + H * r[1] + I * r[2]) / det
    return det


@njit(cache=True)
def accel3(x, u, m, da, gx, gy, gz, qdd):
    """Generalized accelerations of the reduced model; guarded (never NaN).

    qdd (3,) is filled with (ddpsi, ddl1, ddl2); returns the normalized
    radicand before clamping, for domain checks.
    """
    psi = x[0]
    l1 = x[1]
    l2 = x[2]
    dpsi = x[3]
    dl1 = x[4]
    dl2 = x[5]
    if l1 < 1e-9:
        l1 = 1e-9
    if l2 < 1e-9:
        l2 = 1e-9
    c = (da * da + l1 * l1 - l2 * l2) / (2.0 * da)
    rad = l1 * l1 - c * c
    radnorm = rad / (l1 * l1)
    if rad < RAD_CLAMP * l1 * l1:
        rad = RAD_CLAMP * l1 * l1
    rho = np.sqrt(rad)
    s = np.sin(psi)
    co = np.cos(psi)
    px = rho * s
    py = c
    pz = -rho * co

    c1 = l1 / da
    c2 = -l2 / da
    rho1 = (l1 - c * c1) / rho
    rho2 = -(c * c2) / rho

    J = np.empty((3, 3))
    J[0, 0] = rho * co
    J[0, 1] = rho1 * s
    J[0, 2] = rho2 * s
    J[1, 0] = 0.0
    J[1, 1] = c1
    J[1, 2] = c2
    J[2, 0] = rho * s
    J[2, 1] = -rho1 * co
    J[2, 2] = -rho2 * co

    # b = d(J)/dt qdot = qdot^T Hess(p_k) qdot, with analytic FK Hessians
    c11 = 1.0 / da
    c22 = -1.0 / da
    rho11 = (1.0 - c1 * c1 - c * c11 - rho1 * rho1) / rho
    rho12 = (-c1 * c2 - rho1 * rho2) / rho
    rho22 = (-c2 * c2 - c * c22 - rho2 * rho2) / rho
    qf = rho11 * dl1 * dl1 + 2.0 * rho12 * dl1 * dl2 + rho22 * dl2 * dl2
    cross = rho1 * dl1 + rho2 * dl2
    bx = -rho * s * dpsi * dpsi + 2.0 * co * dpsi * cross + s * qf
    by = c11 * dl1 * dl1 + c22 * dl2 * dl2
    bz = rho * co * dpsi * dpsi + 2.0 * s * dpsi * cross - co * qf

    # rope axes from each anchor toward the robot; |p - p_a| equals the rope
    # length by construction
    alx = px / l1
    aly = py / l1
    alz = pz / l1
    arx = px / l2
    ary = (py - da) / l2
    arz = pz / l2

    ftx = alx * u[0] + arx * u[1] + u[2]
    fty = aly * u[0] + ary * u[1] + u[3]
    ftz = alz * u[0] + arz * u[1] + u[4]

    r = np.empty(3)
    r[0] = gx + ftx / m - bx
    r[1] = gy + fty / m - by
    r[2] = gz + ftz / m - bz
    solve3(J, r, qdd)
    return radnorm


@njit(cache=True)
def xdot6(x, u, m, da, gx, gy, gz, out):
    """State derivative (qdot, qddot); returns the normalized radicand."""
    qdd = np.empty(3)
    radnorm = accel3(x, u, m, da, gx, gy, gz, qdd)
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = qdd[0]
    out[4] = qdd[1]
    out[5] = qdd[2]
    return radnorm


@njit(cache=True)
def rk4_substep(x, u, h, m, da, gx, gy, gz, out):
    """Single RK4 step under constant u; returns the min radicand over the stages."""
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    rmin = xdot6(x, u, m, da, gx, gy, gz, k1)
    for i in range(6):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    r = xdot6(tmp, u, m, da, gx, gy, gz, k2)
    if r < rmin:
        rmin = r
    for i in range(6):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    r = xdot6(tmp, u, m, da, gx, gy, gz, k3)
    if r < rmin:
        rmin = r
    for i in range(6):
        tmp[i] = x[i] + h * k3[i]
    r = xdot6(tmp, u, m, da, gx, gy, gz, k4)
    if r < rmin:
        rmin = r
    for i in range(6):
        v = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if v > STATE_CLAMP:
            v = STATE_CLAMP
        elif v < -STATE_CLAMP:
            v = -STATE_CLAMP
        out[i] = v
    return rmin


@njit(cache=True)
def segment_plan(N, n_sub, t_f, cutoff):
    """Integration segments honoring the fixed thrust window [0, cutoff].

    Each knot interval becomes one segment, except the interval containing the
    cutoff which splits in two (thrust on / off).  Returns arrays
    (knot index, h_sub, thrust flag, dh_sub/dt_f) with one row per segment.
    A split slot is always allocated when cutoff < t_f so array shapes do not
    depend on t_f.
    """
    ts = t_f / N
    if cutoff >= t_f or cutoff <= 0.0:
        n_seg = N
        split = -1
    else:
        n_seg = N + 1
        split = int(cutoff / ts)
        if split > N - 1:
            split = N - 1
    knot = np.empty(n_seg, dtype=np.int64)
    hsub = np.empty(n_seg)
    thrust = np.empty(n_seg, dtype=np.int64)
    dhdtf = np.empty(n_seg)
    s = 0
    for k in range(N):
        t0 = k * ts
        t1 = (k + 1) * ts
        if k == split:
            tc = cutoff
            if tc < t0:
                tc = t0
            if tc > t1:
                tc = t1
            knot[s] = k
            hsub[s] = (tc - t0) / n_sub
            thrust[s] = 1
            dhdtf[s] = -k / (N * n_sub)
            s += 1
            knot[s] = k
            hsub[s] = (t1 - tc) / n_sub
            thrust[s] = 0
            dhdtf[s] = (k + 1.0) / (N * n_sub)
            s += 1
        else:
            knot[s] = k
            hsub[s] = (t1 - t0) / n_sub
            thrust[s] = 1 if t1 <= cutoff else 0
            dhdtf[s] = 1.0 / (N * n_sub)
            s += 1
    return knot, hsub, thrust, dhdtf


@njit(cache=True)
def rollout_core(x0, U, t_f, n_sub, cutoff, m, da, gx, gy, gz):
    """Integrate the full horizon.

    Returns (knots (N+1,6), subs (n_states,6), knot_idx (N+1,), x_cut (6,),
    min_radnorm, first_bad_knot).  ``subs`` holds x0 followed by the state
    after every RK4 sub-step; knot_idx maps knot k to its row in subs.  x_cut
    is the state at the thrust cutoff (equals x0 when no split segment).
    first_bad_knot is -1 while the state stays in the valid domain.
    """
    N = U.shape[0]
    knot, hsub, thrust, _ = segment_plan(N, n_sub, t_f, cutoff)
    n_seg = knot.shape[0]
    n_states = 1 + n_seg * n_sub

    subs = np.empty((n_states, 6))
    knots = np.empty((N + 1, 6))
    knot_idx = np.empty(N + 1, dtype=np.int64)
    x_cut = np.empty(6)

    x = x0.copy()
    subs[0] = x
    knots[0] = x
    knot_idx[0] = 0
    for i in range(6):
        x_cut[i] = x0[i]

    u_eff = np.empty(5)
    xn = np.empty(6)
    min_rad = 1.0
    first_bad = -1
    row = 1
    for s in range(n_seg):
        k = knot[s]
        u_eff[0] = U[k, 0]
        u_eff[1] = U[k, 1]
        if thrust[s] == 1:
            u_eff[2] = U[k, 2]
            u_eff[3] = U[k, 3]
            u_eff[4] = U[k, 4]
        else:
            u_eff[2] = 0.0
            u_eff[3] = 0.0
            u_eff[4] = 0.0
        h = hsub[s]
        for _ in range(n_sub):
            r = rk4_substep(x, u_eff, h, m, da, gx, gy, gz, xn)
            for i in range(6):
                x[i] = xn[i]
            subs[row] = x
            row += 1
            if r < min_rad:
                min_rad = r
            if (r <= RAD_VALID or x[1] <= 0.0 or x[2] <= 0.0) and first_bad < 0:
                first_bad = k
        if s + 1 < n_seg and knot[s + 1] == k:
            # end of the thrust half of a split interval
            for i in range(6):
                x_cut[i] = x[i]
        if s + 1 >= n_seg or knot[s + 1] != k:
            knots[k + 1] = x
            knot_idx[k + 1] = row - 1
    return knots, subs, knot_idx, x_cut, min_rad, first_bad
