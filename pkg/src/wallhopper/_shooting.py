"""Shooting kernels: sensitivity rollout and augmented-Lagrangian merit.

The decision vector theta stacks the controls row-major (5 per knot: two rope
forces, three leg-force components) followed by the jump duration t_f.  The
rollout propagates the state Jacobian S = dx/dtheta alongside the state, so
one call yields the merit value and its exact gradient (up to the finite
differences used for the per-stage dq''/dq blocks).

Inequality constraints use the standard quadratic multiplier form
phi(c) = (max(0, lam + rho c)^2 - lam^2) / (2 rho) with dphi/dc =
max(0, lam + rho c).  Constraint layout (n_ss = number of recorded states):

    [0, n_ss)          wall clearance  (f_mesh + margin - p_X) / L
    [n_ss, 2 n_ss)     domain          (rad_min - radicand) influence
    [2n_ss, 3 n_ss)    rope length     (l_min - l1) / L
    [3n_ss, 4 n_ss)    rope length     (l_min - l2) / L
    next 1             mid-jump clearance
    next 6             landing block (patch box+mesh, or goal ball in slot 0)
    next 3             leg norm, leg unilaterality, friction cone (thrust knot)
"""

import numpy as np
from numba import njit

from ._kernels import (
    RAD_CLAMP,
    STATE_CLAMP,
    accel3,
    bilinear_clamped,
    fk_jacobian_k,
    rollout_core,
    segment_plan,
    solve3,
)

FD_STEP = 1e-6


@njit(cache=True)
def n_constraints(n_states):
    return 4 * n_states + 1 + 6 + 3


@njit(cache=True)
def _inv3(J, Jinv):
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
    II = a * e - b * d
    det = a * A + d * B + g * C
    if det >= 0.0 and det < 1e-12:
        det = 1e-12
    elif det < 0.0 and det > -1e-12:
        det = -1e-12
    Jinv[0, 0] = A / det
    Jinv[0, 1] = B / det
    Jinv[0, 2] = C / det
    Jinv[1, 0] = D / det
    Jinv[1, 1] = E / det
    Jinv[1, 2] = F / det
    Jinv[2, 0] = G / det
    Jinv[2, 1] = H / det
    Jinv[2, 2] = II / det


@njit(cache=True)
def _accel_jac(x, u, thrust, m, da, gx, gy, gz, qdd, Fx, Fu):
    """State-derivative Jacobians at one stage.

    Fills Fx (6x6) and Fu (6x5) of xdot = (qdot, qdd(q, qdot, u)); dq''/dq by
    central differences, dq''/dqdot and dq''/du analytic.  Returns radicand.
    """
    radn = accel3(x, u, m, da, gx, gy, gz, qdd)

    for i in range(6):
        for j in range(6):
            Fx[i, j] = 0.0
        for j in range(5):
            Fu[i, j] = 0.0
    Fx[0, 3] = 1.0
    Fx[1, 4] = 1.0
    Fx[2, 5] = 1.0

    # dq''/dq by central FD on the guarded acceleration
    xp = x.copy()
    t1 = np.empty(3)
    t2 = np.empty(3)
    for j in range(3):
        h = FD_STEP * (1.0 + abs(x[j]))
        xp[j] = x[j] + h
        accel3(xp, u, m, da, gx, gy, gz, t1)
        xp[j] = x[j] - h
        accel3(xp, u, m, da, gx, gy, gz, t2)
        xp[j] = x[j]
        for i in range(3):
            Fx[3 + i, j] = (t1[i] - t2[i]) / (2.0 * h)

    # FK pieces for the analytic blocks
    psi = x[0]
    l1 = x[1]
    l2 = x[2]
    if l1 < 1e-9:
        l1 = 1e-9
    if l2 < 1e-9:
        l2 = 1e-9
    dpsi = x[3]
    dl1 = x[4]
    dl2 = x[5]
    c = (da * da + l1 * l1 - l2 * l2) / (2.0 * da)
    rad = l1 * l1 - c * c
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
    c11 = 1.0 / da
    c22 = -1.0 / da
    rho11 = (1.0 - c1 * c1 - c * c11 - rho1 * rho1) / rho
    rho12 = (-c1 * c2 - rho1 * rho2) / rho
    rho22 = (-c2 * c2 - c * c22 - rho2 * rho2) / rho

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
    Jinv = np.empty((3, 3))
    _inv3(J, Jinv)

    # rows of (Hessian_k qdot): dq''/dqdot = -A^{-1} (2 H qdot)
    crs = rho1 * dl1 + rho2 * dl2
    qf1 = rho11 * dl1 + rho12 * dl2
    qf2 = rho12 * dl1 + rho22 * dl2
    hx0 = -rho * s * dpsi + co * crs
    hx1 = rho1 * co * dpsi + s * qf1
    hx2 = rho2 * co * dpsi + s * qf2
    hy1 = c11 * dl1
    hy2 = c22 * dl2
    hz0 = rho * co * dpsi + s * crs
    hz1 = rho1 * s * dpsi - co * qf1
    hz2 = rho2 * s * dpsi - co * qf2
    for jj in range(3):
        if jj == 0:
            b0 = 2.0 * hx0
            b1 = 0.0
            b2 = 2.0 * hz0
        elif jj == 1:
            b0 = 2.0 * hx1
            b1 = 2.0 * hy1
            b2 = 2.0 * hz1
        else:
            b0 = 2.0 * hx2
            b1 = 2.0 * hy2
            b2 = 2.0 * hz2
        for i in range(3):
            Fx[3 + i, 3 + jj] = -(Jinv[i, 0] * b0 + Jinv[i, 1] * b1 + Jinv[i, 2] * b2)

    # dq''/du: rope columns A^{-1} a_hat / m, leg columns A^{-1} / m
    alx = px / l1
    aly = py / l1
    alz = pz / l1
    arx = px / l2
    ary = (py - da) / l2
    arz = pz / l2
    for i in range(3):
        Fu[3 + i, 0] = (Jinv[i, 0] * alx + Jinv[i, 1] * aly + Jinv[i, 2] * alz) / m
        Fu[3 + i, 1] = (Jinv[i, 0] * arx + Jinv[i, 1] * ary + Jinv[i, 2] * arz) / m
        if thrust == 1:
            Fu[3 + i, 2] = Jinv[i, 0] / m
            Fu[3 + i, 3] = Jinv[i, 1] / m
            Fu[3 + i, 4] = Jinv[i, 2] / m
    return radn


@njit(cache=True)
def _mat66_mul(A, B, out):
    for i in range(6):
        for j in range(6):
            s = 0.0
            for k in range(6):
                s += A[i, k] * B[k, j]
            out[i, j] = s


@njit(cache=True)
def _xdot_from(x, qdd, out):
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = qdd[0]
    out[4] = qdd[1]
    out[5] = qdd[2]


@njit(cache=True)
def _substep_sens(x, u, thrust, h, m, da, gx, gy, gz, xn, Phix, Phiu, dxdh):
    """One RK4 sub-step plus its Jacobians w.r.t. (x, u, h)."""
    qdd = np.empty(3)
    F1 = np.empty((6, 6))
    F2 = np.empty((6, 6))
    F3 = np.empty((6, 6))
    F4 = np.empty((6, 6))
    B1 = np.empty((6, 5))
    B2 = np.empty((6, 5))
    B3 = np.empty((6, 5))
    B4 = np.empty((6, 5))
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)

    rmin = _accel_jac(x, u, thrust, m, da, gx, gy, gz, qdd, F1, B1)
    _xdot_from(x, qdd, k1)
    for i in range(6):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    r = _accel_jac(tmp, u, thrust, m, da, gx, gy, gz, qdd, F2, B2)
    if r < rmin:
        rmin = r
    _xdot_from(tmp, qdd, k2)
    for i in range(6):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    r = _accel_jac(tmp, u, thrust, m, da, gx, gy, gz, qdd, F3, B3)
    if r < rmin:
        rmin = r
    _xdot_from(tmp, qdd, k3)
    for i in range(6):
        tmp[i] = x[i] + h * k3[i]
    r = _accel_jac(tmp, u, thrust, m, da, gx, gy, gz, qdd, F4, B4)
    if r < rmin:
        rmin = r
    _xdot_from(tmp, qdd, k4)

    for i in range(6):
        v = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if v > STATE_CLAMP:
            v = STATE_CLAMP
        elif v < -STATE_CLAMP:
            v = -STATE_CLAMP
        xn[i] = v

    # chain rule through the stages: Mi = dki/dx, Ni = dki/du, di = dki/dh
    M2 = np.empty((6, 6))
    M3 = np.empty((6, 6))
    M4 = np.empty((6, 6))
    T = np.empty((6, 6))
    for i in range(6):
        for j in range(6):
            T[i, j] = (1.0 if i == j else 0.0) + 0.5 * h * F1[i, j]
    _mat66_mul(F2, T, M2)
    for i in range(6):
        for j in range(6):
            T[i, j] = (1.0 if i == j else 0.0) + 0.5 * h * M2[i, j]
    _mat66_mul(F3, T, M3)
    for i in range(6):
        for j in range(6):
            T[i, j] = (1.0 if i == j else 0.0) + h * M3[i, j]
    _mat66_mul(F4, T, M4)
    for i in range(6):
        for j in range(6):
            Phix[i, j] = (1.0 if i == j else 0.0) + h / 6.0 * (
                F1[i, j] + 2.0 * M2[i, j] + 2.0 * M3[i, j] + M4[i, j]
            )

    # control direction
    N2 = np.empty((6, 5))
    N3 = np.empty((6, 5))
    N4 = np.empty((6, 5))
    for i in range(6):
        for j in range(5):
            s = 0.0
            for k in range(6):
                s += F2[i, k] * B1[k, j]
            N2[i, j] = B2[i, j] + 0.5 * h * s
    for i in range(6):
        for j in range(5):
            s = 0.0
            for k in range(6):
                s += F3[i, k] * N2[k, j]
            N3[i, j] = B3[i, j] + 0.5 * h * s
    for i in range(6):
        for j in range(5):
            s = 0.0
            for k in range(6):
                s += F4[i, k] * N3[k, j]
            N4[i, j] = B4[i, j] + h * s
    for i in range(6):
        for j in range(5):
            Phiu[i, j] = h / 6.0 * (B1[i, j] + 2.0 * N2[i, j] + 2.0 * N3[i, j] + N4[i, j])

    # step-size direction
    d2 = np.empty(6)
    d3 = np.empty(6)
    d4 = np.empty(6)
    for i in range(6):
        s = 0.0
        for k in range(6):
            s += F2[i, k] * k1[k]
        d2[i] = 0.5 * s
    for i in range(6):
        s = 0.0
        for k in range(6):
            s += F3[i, k] * (0.5 * k2[k] + 0.5 * h * d2[k])
        d3[i] = s
    for i in range(6):
        s = 0.0
        for k in range(6):
            s += F4[i, k] * (k3[k] + h * d3[k])
        d4[i] = s
    for i in range(6):
        dxdh[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0 + h / 6.0 * (
            2.0 * d2[i] + 2.0 * d3[i] + d4[i]
        )
    return rmin


@njit(cache=True)
def rollout_sens(x0, U, t_f, n_sub, cutoff, m, da, gx, gy, gz):
    """Rollout recording every sub-step state and its sensitivity to theta.

    Returns (subs, S_subs, knot_rows, x_cut, S_cut, min_rad).  S has one
    column per theta entry (5N controls then t_f), in physical units.
    """
    N = U.shape[0]
    ntheta = 5 * N + 1
    knot, hsub, thrust, dhdtf = segment_plan(N, n_sub, t_f, cutoff)
    n_seg = knot.shape[0]
    n_states = 1 + n_seg * n_sub

    subs = np.empty((n_states, 6))
    S_subs = np.zeros((n_states, 6, ntheta))
    knot_rows = np.empty(N + 1, dtype=np.int64)
    x = x0.copy()
    S = np.zeros((6, ntheta))
    subs[0] = x
    knot_rows[0] = 0
    x_cut = x0.copy()
    S_cut = np.zeros((6, ntheta))

    u_eff = np.empty(5)
    xn = np.empty(6)
    Phix = np.empty((6, 6))
    Phiu = np.empty((6, 5))
    dxdh = np.empty(6)
    Snew = np.empty((6, ntheta))
    min_rad = 1.0
    row = 1
    for sg in range(n_seg):
        k = knot[sg]
        th = thrust[sg]
        u_eff[0] = U[k, 0]
        u_eff[1] = U[k, 1]
        if th == 1:
            u_eff[2] = U[k, 2]
            u_eff[3] = U[k, 3]
            u_eff[4] = U[k, 4]
        else:
            u_eff[2] = 0.0
            u_eff[3] = 0.0
            u_eff[4] = 0.0
        h = hsub[sg]
        dh = dhdtf[sg]
        base = 5 * k
        for _ in range(n_sub):
            r = _substep_sens(x, u_eff, th, h, m, da, gx, gy, gz, xn, Phix, Phiu, dxdh)
            if r < min_rad:
                min_rad = r
            # S <- Phix S + Phiu dU/dtheta + dxdh dh/dtheta
            for i in range(6):
                for j in range(ntheta):
                    s = 0.0
                    for kk in range(6):
                        s += Phix[i, kk] * S[kk, j]
                    Snew[i, j] = s
            ncols = 5 if th == 1 else 2
            for i in range(6):
                for j in range(ncols):
                    Snew[i, base + j] += Phiu[i, j]
                Snew[i, ntheta - 1] += dxdh[i] * dh
            for i in range(6):
                x[i] = xn[i]
                for j in range(ntheta):
                    S[i, j] = Snew[i, j]
            subs[row] = x
            S_subs[row] = S
            row += 1
        if sg + 1 < n_seg and knot[sg + 1] == k:
            for i in range(6):
                x_cut[i] = x[i]
                for j in range(ntheta):
                    S_cut[i, j] = S[i, j]
        if sg + 1 >= n_seg or knot[sg + 1] != k:
            knot_rows[k + 1] = row - 1
    return subs, S_subs, knot_rows, x_cut, S_cut, min_rad


@njit(cache=True)
def merit_and_grad(
    theta,
    scales,
    x0,
    N,
    n_sub,
    cutoff,
    m,
    da,
    gx,
    gy,
    gz,
    mesh,
    mesh_oy,
    mesh_oz,
    mesh_res,
    cost,
    cost_oy,
    cost_oz,
    cost_res,
    target_mode,
    target,
    nc,
    tx,
    ty,
    p_surf,
    h_clear,
    w_s,
    w_hw,
    w_l,
    delta,
    wall_margin,
    rad_min_c,
    l_min,
    mu,
    f_leg_max,
    len_scale,
    force_scale,
    lam,
    rho,
    want_grad,
):
    """Augmented-Lagrangian merit, gradient, and scaled constraint values.

    theta is in scaled units (theta * scales = physical).  With rho == 0 and
    lam all zero, the returned value/gradient are the bare objective's.
    Returns (merit, grad, c, objective, min_radicand).
    """
    ntheta = theta.shape[0]
    U = np.empty((N, 5))
    for k in range(N):
        for j in range(5):
            U[k, j] = theta[5 * k + j] * scales[5 * k + j]
    t_f = theta[ntheta - 1] * scales[ntheta - 1]

    if want_grad == 1:
        subs, S_subs, knot_rows, x_cutv, S_cut, min_rad = rollout_sens(
            x0, U, t_f, n_sub, cutoff, m, da, gx, gy, gz
        )
    else:
        _, subs, knot_rows, x_cutv, min_rad, _fb = rollout_core(
            x0, U, t_f, n_sub, cutoff, m, da, gx, gy, gz
        )
        S_subs = np.zeros((1, 6, ntheta))
        S_cut = np.zeros((6, ntheta))

    n_states = subs.shape[0]
    n_con = n_constraints(n_states)
    c = np.empty(n_con)
    grad = np.zeros(ntheta)
    gstate = np.empty(6)

    ts = t_f / N
    tf_idx = ntheta - 1

    # ---------------- objective ----------------
    obj = 0.0
    # force smoothing, first difference from zero
    for i in range(2):
        prev = 0.0
        for k in range(N):
            d = U[k, i] - prev
            obj += w_s * d * d
            if want_grad == 1:
                grad[5 * k + i] += 2.0 * w_s * d
                if k > 0:
                    grad[5 * (k - 1) + i] -= 2.0 * w_s * d
            prev = U[k, i]
    # hoist work, smoothed absolute value
    if w_hw != 0.0:
        for i in range(2):
            for k in range(N):
                row = knot_rows[k]
                ld = subs[row, 4 + i]
                v = U[k, i] * ld
                sv = np.sqrt(v * v + delta * delta)
                obj += w_hw * sv * ts
                if want_grad == 1:
                    dv = v / sv
                    grad[5 * k + i] += w_hw * dv * ld * ts
                    grad[tf_idx] += w_hw * sv / N
                    # state dependence through ldot
                    coef = w_hw * dv * U[k, i] * ts
                    for j in range(ntheta):
                        grad[j] += coef * S_subs[row, 4 + i, j]
    # landing cost; off-map landings see the clamped edge value (the landing
    # constraints supply the pull toward the target, so no sentinel cliff here)
    rowN = knot_rows[N]
    xN = subs[rowN]
    JN = np.empty((3, 3))
    pNx, pNy, pNz, _ = fk_jacobian_k(xN[0], xN[1], xN[2], da, JN)
    cl, dcy, dcz = bilinear_clamped(cost, cost_oy, cost_oz, cost_res, pNy, pNz)
    obj += w_l * cl
    if want_grad == 1:
        for j in range(ntheta):
            sY = JN[1, 0] * S_subs[rowN, 0, j] + JN[1, 1] * S_subs[rowN, 1, j] + JN[1, 2] * S_subs[rowN, 2, j]
            sZ = JN[2, 0] * S_subs[rowN, 0, j] + JN[2, 1] * S_subs[rowN, 1, j] + JN[2, 2] * S_subs[rowN, 2, j]
            grad[j] += w_l * (dcy * sY + dcz * sZ)

    # ---------------- constraints ----------------
    val = obj
    Js = np.empty((3, 3))

    for srow in range(n_states):
        xs = subs[srow]
        px, py, pz, radn = fk_jacobian_k(xs[0], xs[1], xs[2], da, Js)
        fm, dfy, dfz = bilinear_clamped(mesh, mesh_oy, mesh_oz, mesh_res, py, pz)

        # wall
        ci = (fm + wall_margin - px) / len_scale
        idx = srow
        c[idx] = ci
        w = lam[idx] + rho * ci
        if w > 0.0:
            val += (w * w - lam[idx] * lam[idx]) / (2.0 * rho)
            if want_grad == 1:
                for i in range(3):
                    gstate[i] = (dfy * Js[1, i] + dfz * Js[2, i] - Js[0, i]) / len_scale
                for j in range(ntheta):
                    s = 0.0
                    for i in range(3):
                        s += gstate[i] * S_subs[srow, i, j]
                    grad[j] += w * s
        elif rho > 0.0:
            val -= lam[idx] * lam[idx] / (2.0 * rho)

        # domain: radicand above threshold
        ci = rad_min_c - radn
        idx = n_states + srow
        c[idx] = ci
        w = lam[idx] + rho * ci
        if w > 0.0:
            val += (w * w - lam[idx] * lam[idx]) / (2.0 * rho)
            if want_grad == 1:
                l1 = xs[1]
                l2 = xs[2]
                cc = (da * da + l1 * l1 - l2 * l2) / (2.0 * da)
                c1 = l1 / da
                c2 = -l2 / da
                dr_dl1 = -2.0 * cc * (c1 * l1 - cc) / (l1 * l1 * l1)
                dr_dl2 = -2.0 * cc * c2 / (l1 * l1)
                for j in range(ntheta):
                    grad[j] += w * (-dr_dl1 * S_subs[srow, 1, j] - dr_dl2 * S_subs[srow, 2, j])
        elif rho > 0.0:
            val -= lam[idx] * lam[idx] / (2.0 * rho)

        # minimum rope lengths
        for ri in range(2):
            ci = (l_min - xs[1 + ri]) / len_scale
            idx = (2 + ri) * n_states + srow
            c[idx] = ci
            w = lam[idx] + rho * ci
            if w > 0.0:
                val += (w * w - lam[idx] * lam[idx]) / (2.0 * rho)
                if want_grad == 1:
                    for j in range(ntheta):
                        grad[j] -= w * S_subs[srow, 1 + ri, j] / len_scale
            elif rho > 0.0:
                val -= lam[idx] * lam[idx] / (2.0 * rho)

    base = 4 * n_states

    # mid-jump clearance above the lift-off surface plane
    midrow = knot_rows[N // 2]
    xm = subs[midrow]
    Jm = np.empty((3, 3))
    pmx, pmy, pmz, _ = fk_jacobian_k(xm[0], xm[1], xm[2], da, Jm)
    dist = nc[0] * (pmx - p_surf[0]) + nc[1] * (pmy - p_surf[1]) + nc[2] * (pmz - p_surf[2])
    ci = (h_clear - dist) / len_scale
    c[base] = ci
    w = lam[base] + rho * ci
    if w > 0.0:
        val += (w * w - lam[base] * lam[base]) / (2.0 * rho)
        if want_grad == 1:
            for i in range(3):
                gstate[i] = -(nc[0] * Jm[0, i] + nc[1] * Jm[1, i] + nc[2] * Jm[2, i]) / len_scale
            for j in range(ntheta):
                s = 0.0
                for i in range(3):
                    s += gstate[i] * S_subs[midrow, i, j]
                grad[j] += w * s
    elif rho > 0.0:
        val -= lam[base] * lam[base] / (2.0 * rho)

    # landing block
    fmN, dfyN, dfzN = bilinear_clamped(mesh, mesh_oy, mesh_oz, mesh_res, pNy, pNz)
    lc = np.empty(6)
    if target_mode == 0:
        pcy = target[0]
        pcz = target[1]
        hy = target[2]
        hz = target[3]
        eps = target[4]
        lc[0] = (pcy - hy - pNy) / len_scale
        lc[1] = (pNy - pcy - hy) / len_scale
        lc[2] = (pcz - hz - pNz) / len_scale
        lc[3] = (pNz - pcz - hz) / len_scale
        lc[4] = (pNx - fmN - eps) / len_scale
        lc[5] = (fmN - pNx - eps) / len_scale
    else:
        pfx = target[0]
        pfy = target[1]
        pfz = target[2]
        eps = target[3]
        dx = pNx - pfx
        dy = pNy - pfy
        dz = pNz - pfz
        lc[0] = (dx * dx + dy * dy + dz * dz - eps * eps) / (len_scale * len_scale)
        for q in range(1, 6):
            lc[q] = -1.0
    for q in range(6):
        idx = base + 1 + q
        c[idx] = lc[q]
        w = lam[idx] + rho * lc[q]
        if w > 0.0:
            val += (w * w - lam[idx] * lam[idx]) / (2.0 * rho)
            if want_grad == 1:
                if target_mode == 0:
                    if q == 0:
                        for i in range(3):
                            gstate[i] = -JN[1, i] / len_scale
                    elif q == 1:
                        for i in range(3):
                            gstate[i] = JN[1, i] / len_scale
                    elif q == 2:
                        for i in range(3):
                            gstate[i] = -JN[2, i] / len_scale
                    elif q == 3:
                        for i in range(3):
                            gstate[i] = JN[2, i] / len_scale
                    elif q == 4:
                        for i in range(3):
                            gstate[i] = (JN[0, i] - dfyN * JN[1, i] - dfzN * JN[2, i]) / len_scale
                    else:
                        for i in range(3):
                            gstate[i] = (dfyN * JN[1, i] + dfzN * JN[2, i] - JN[0, i]) / len_scale
                else:
                    if q == 0:
                        dx = pNx - target[0]
                        dy = pNy - target[1]
                        dz = pNz - target[2]
                        for i in range(3):
                            gstate[i] = (
                                2.0 * (dx * JN[0, i] + dy * JN[1, i] + dz * JN[2, i])
                                / (len_scale * len_scale)
                            )
                    else:
                        for i in range(3):
                            gstate[i] = 0.0
                for j in range(ntheta):
                    s = 0.0
                    for i in range(3):
                        s += gstate[i] * S_subs[rowN, i, j]
                    grad[j] += w * s
        elif rho > 0.0:
            val -= lam[idx] * lam[idx] / (2.0 * rho)

    # leg force constraints at the thrust knot (knot 0)
    flx = U[0, 2]
    fly = U[0, 3]
    flz = U[0, 4]
    # norm bound, squared
    ci = (flx * flx + fly * fly + flz * flz - f_leg_max * f_leg_max) / (force_scale * force_scale)
    idx = base + 7
    c[idx] = ci
    w = lam[idx] + rho * ci
    if w > 0.0:
        val += (w * w - lam[idx] * lam[idx]) / (2.0 * rho)
        if want_grad == 1:
            grad[2] += w * 2.0 * flx / (force_scale * force_scale)
            grad[3] += w * 2.0 * fly / (force_scale * force_scale)
            grad[4] += w * 2.0 * flz / (force_scale * force_scale)
    elif rho > 0.0:
        val -= lam[idx] * lam[idx] / (2.0 * rho)
    # unilaterality: leg pushes away from the surface
    ndot = nc[0] * flx + nc[1] * fly + nc[2] * flz
    ci = -ndot / force_scale
    idx = base + 8
    c[idx] = ci
    w = lam[idx] + rho * ci
    if w > 0.0:
        val += (w * w - lam[idx] * lam[idx]) / (2.0 * rho)
        if want_grad == 1:
            grad[2] -= w * nc[0] / force_scale
            grad[3] -= w * nc[1] / force_scale
            grad[4] -= w * nc[2] / force_scale
    elif rho > 0.0:
        val -= lam[idx] * lam[idx] / (2.0 * rho)
    # second-order friction cone, smoothed at the apex
    tdx = tx[0] * flx + tx[1] * fly + tx[2] * flz
    tdy = ty[0] * flx + ty[1] * fly + ty[2] * flz
    tn = np.sqrt(tdx * tdx + tdy * tdy + delta * delta)
    ci = (tn - mu * ndot) / force_scale
    idx = base + 9
    c[idx] = ci
    w = lam[idx] + rho * ci
    if w > 0.0:
        val += (w * w - lam[idx] * lam[idx]) / (2.0 * rho)
        if want_grad == 1:
            for q, gidx in ((0, 2), (1, 3), (2, 4)):
                d = (tdx * tx[q] + tdy * ty[q]) / tn - mu * nc[q]
                grad[gidx] += w * d / force_scale
    elif rho > 0.0:
        val -= lam[idx] * lam[idx] / (2.0 * rho)

    if want_grad == 1:
        for j in range(ntheta):
            grad[j] *= scales[j]
    return val, grad, c, obj, min_rad
