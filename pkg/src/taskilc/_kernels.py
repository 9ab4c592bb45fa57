"""Numba kernels for planar floating-base rigid-body dynamics.

All kernels operate on the flat array form of a robot (see
``model.RobotModel.arrays``):

    parent  : (nl,) int64, parent link index, parent[0] = -1 (root)
    jpos    : (nl, 2) float64, joint anchor in the parent frame (row 0 unused)
    mass    : (nl,) float64
    com     : (nl, 2) float64, link CoM in the link frame
    inertia : (nl,) float64, rotational inertia about the link CoM

Conventions. The plane is (x, z) with z up; an angle is measured
counterclockwise (from +x toward +z), so rot(th) @ u rotates u by +th,
perp(u) = (-u_z, u_x) and omega x u = omega * perp(u). Generalized
coordinates are q = [base_x, base_z, base_pitch, joint_1 .. joint_n];
link i >= 1 owns coordinate 2 + i. The base coordinate pair (x, z) is
the world position of the root-link frame origin and base_pitch rotates
the root about that origin. Links must be topologically ordered
(parent[i] < i), which the model loader guarantees.

Contact rows: a point contact contributes rows (x, z); a flat contact
contributes rows (x, z, pitch) of its reference point/frame. Contact
forces are expressed in the same row layout, so a flat contact carries a
planar wrench (f_x, f_z, m_y).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def fk_pose(parent, jpos, q):
    """World position of every link-frame origin and world angle."""
    nl = parent.shape[0]
    px = np.empty(nl)
    pz = np.empty(nl)
    th = np.empty(nl)
    px[0] = q[0]
    pz[0] = q[1]
    th[0] = q[2]
    for i in range(1, nl):
        p = parent[i]
        c = np.cos(th[p])
        s = np.sin(th[p])
        px[i] = px[p] + c * jpos[i, 0] - s * jpos[i, 1]
        pz[i] = pz[p] + s * jpos[i, 0] + c * jpos[i, 1]
        th[i] = th[p] + q[2 + i]
    return px, pz, th


@njit(cache=True)
def fk_vel(parent, jpos, q, qd):
    """Origin velocities and angular rates on top of fk_pose."""
    nl = parent.shape[0]
    px, pz, th = fk_pose(parent, jpos, q)
    vx = np.empty(nl)
    vz = np.empty(nl)
    om = np.empty(nl)
    vx[0] = qd[0]
    vz[0] = qd[1]
    om[0] = qd[2]
    for i in range(1, nl):
        p = parent[i]
        ux = px[i] - px[p]
        uz = pz[i] - pz[p]
        vx[i] = vx[p] - om[p] * uz
        vz[i] = vz[p] + om[p] * ux
        om[i] = om[p] + qd[2 + i]
    return px, pz, th, vx, vz, om


@njit(cache=True)
def fk_bias_acc(parent, jpos, q, qd):
    """Origin accelerations under qdd = 0 (centripetal cascade).

    With zero generalized accelerations every angular acceleration
    vanishes, so a_i = a_parent - omega_parent^2 * (offset to parent).
    """
    nl = parent.shape[0]
    px, pz, th, vx, vz, om = fk_vel(parent, jpos, q, qd)
    ax = np.empty(nl)
    az = np.empty(nl)
    ax[0] = 0.0
    az[0] = 0.0
    for i in range(1, nl):
        p = parent[i]
        ux = px[i] - px[p]
        uz = pz[i] - pz[p]
        w2 = om[p] * om[p]
        ax[i] = ax[p] - w2 * ux
        az[i] = az[p] - w2 * uz
    return px, pz, th, vx, vz, om, ax, az


@njit(cache=True)
def rnea(parent, jpos, mass, com, inertia, gz, q, qd, qdd):
    """Inverse dynamics: generalized forces realizing qdd at (q, qd).

    Newton-Euler in world coordinates. The backward pass accumulates
    per-subtree force F and torque N about the world origin; the
    generalized force of joint i is then N_i - p_i x F_i and the base
    rows carry the root subtree wrench about the base origin.
    """
    nl = parent.shape[0]
    nq = nl + 2
    px, pz, th = fk_pose(parent, jpos, q)

    vxo = np.empty(nl)
    vzo = np.empty(nl)
    om = np.empty(nl)
    axo = np.empty(nl)
    azo = np.empty(nl)
    omd = np.empty(nl)
    vxo[0] = qd[0]
    vzo[0] = qd[1]
    om[0] = qd[2]
    axo[0] = qdd[0]
    azo[0] = qdd[1]
    omd[0] = qdd[2]
    for i in range(1, nl):
        p = parent[i]
        ux = px[i] - px[p]
        uz = pz[i] - pz[p]
        vxo[i] = vxo[p] - om[p] * uz
        vzo[i] = vzo[p] + om[p] * ux
        om[i] = om[p] + qd[2 + i]
        axo[i] = axo[p] - omd[p] * uz - om[p] * om[p] * ux
        azo[i] = azo[p] + omd[p] * ux - om[p] * om[p] * uz
        omd[i] = omd[p] + qdd[2 + i]

    fx = np.empty(nl)
    fz = np.empty(nl)
    no = np.empty(nl)  # torque about the world origin
    for i in range(nl):
        c = np.cos(th[i])
        s = np.sin(th[i])
        wx = c * com[i, 0] - s * com[i, 1]
        wz = s * com[i, 0] + c * com[i, 1]
        acx = axo[i] - omd[i] * wz - om[i] * om[i] * wx
        acz = azo[i] + omd[i] * wx - om[i] * om[i] * wz
        fx[i] = mass[i] * acx
        fz[i] = mass[i] * (acz + gz)
        cx = px[i] + wx
        cz = pz[i] + wz
        no[i] = inertia[i] * omd[i] + cx * fz[i] - cz * fx[i]

    out = np.zeros(nq)
    for i in range(nl - 1, 0, -1):
        out[2 + i] = no[i] - (px[i] * fz[i] - pz[i] * fx[i])
        p = parent[i]
        fx[p] += fx[i]
        fz[p] += fz[i]
        no[p] += no[i]
    out[0] = fx[0]
    out[1] = fz[0]
    out[2] = no[0] - (px[0] * fz[0] - pz[0] * fx[0])
    return out


@njit(cache=True)
def crba(parent, jpos, mass, com, inertia, q):
    """Mass matrix by the composite-rigid-body algorithm (planar form).

    Walking leaves to root, each link's subtree is collapsed into a
    composite body (mass, CoM, inertia about the CoM). The wrench of a
    unit joint acceleration is projected onto every ancestor joint axis
    and onto the three base coordinates.
    """
    nl = parent.shape[0]
    nq = nl + 2
    px, pz, th = fk_pose(parent, jpos, q)

    mc = np.empty(nl)
    ccx = np.empty(nl)
    ccz = np.empty(nl)
    ic = np.empty(nl)
    for i in range(nl):
        c = np.cos(th[i])
        s = np.sin(th[i])
        mc[i] = mass[i]
        ccx[i] = px[i] + c * com[i, 0] - s * com[i, 1]
        ccz[i] = pz[i] + s * com[i, 0] + c * com[i, 1]
        ic[i] = inertia[i]

    M = np.zeros((nq, nq))
    for i in range(nl - 1, 0, -1):
        # wrench of unit qdd at joint i: rotation about its anchor
        rx = ccx[i] - px[i]
        rz = ccz[i] - pz[i]
        Fx = -mc[i] * rz
        Fz = mc[i] * rx
        Na = ic[i] + mc[i] * (rx * rx + rz * rz)
        M[2 + i, 2 + i] = Na
        j = parent[i]
        while j > 0:
            Nk = Na + (px[i] - px[j]) * Fz - (pz[i] - pz[j]) * Fx
            M[2 + i, 2 + j] = Nk
            M[2 + j, 2 + i] = Nk
            j = parent[j]
        M[2 + i, 0] = Fx
        M[0, 2 + i] = Fx
        M[2 + i, 1] = Fz
        M[1, 2 + i] = Fz
        Nb = Na + (px[i] - px[0]) * Fz - (pz[i] - pz[0]) * Fx
        M[2 + i, 2] = Nb
        M[2, 2 + i] = Nb
        # merge composite i into its parent
        p = parent[i]
        ms = mc[p] + mc[i]
        nx = (mc[p] * ccx[p] + mc[i] * ccx[i]) / ms
        nz = (mc[p] * ccz[p] + mc[i] * ccz[i]) / ms
        dpx = ccx[p] - nx
        dpz = ccz[p] - nz
        dix = ccx[i] - nx
        diz = ccz[i] - nz
        ic[p] = (
            ic[p]
            + mc[p] * (dpx * dpx + dpz * dpz)
            + ic[i]
            + mc[i] * (dix * dix + diz * diz)
        )
        mc[p] = ms
        ccx[p] = nx
        ccz[p] = nz

    rx = ccx[0] - px[0]
    rz = ccz[0] - pz[0]
    M[0, 0] = mc[0]
    M[1, 1] = mc[0]
    M[0, 2] = -mc[0] * rz
    M[2, 0] = -mc[0] * rz
    M[1, 2] = mc[0] * rx
    M[2, 1] = mc[0] * rx
    M[2, 2] = ic[0] + mc[0] * (rx * rx + rz * rz)
    return M


@njit(cache=True)
def world_point(parent, jpos, q, body, ptx, ptz):
    px, pz, th = fk_pose(parent, jpos, q)
    c = np.cos(th[body])
    s = np.sin(th[body])
    wx = px[body] + c * ptx - s * ptz
    wz = pz[body] + s * ptx + c * ptz
    return wx, wz, th[body]


@njit(cache=True)
def point_jacobian(parent, jpos, q, body, ptx, ptz, with_rot):
    """Geometric Jacobian of a body-fixed point, optional pitch row."""
    nl = parent.shape[0]
    nq = nl + 2
    px, pz, th = fk_pose(parent, jpos, q)
    c = np.cos(th[body])
    s = np.sin(th[body])
    wx = px[body] + c * ptx - s * ptz
    wz = pz[body] + s * ptx + c * ptz
    rows = 3 if with_rot else 2
    J = np.zeros((rows, nq))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    J[0, 2] = -(wz - pz[0])
    J[1, 2] = wx - px[0]
    if with_rot:
        J[2, 2] = 1.0
    l = body
    while l > 0:
        J[0, 2 + l] = -(wz - pz[l])
        J[1, 2 + l] = wx - px[l]
        if with_rot:
            J[2, 2 + l] = 1.0
        l = parent[l]
    return J


@njit(cache=True)
def point_bias_acc(parent, jpos, q, qd, body, ptx, ptz):
    """Jdot(q, qd) qd of a body-fixed point: its acceleration at qdd = 0."""
    px, pz, th, vx, vz, om, ax, az = fk_bias_acc(parent, jpos, q, qd)
    c = np.cos(th[body])
    s = np.sin(th[body])
    wx = c * ptx - s * ptz
    wz = s * ptx + c * ptz
    w2 = om[body] * om[body]
    return ax[body] - w2 * wx, az[body] - w2 * wz


@njit(cache=True)
def com_state(parent, jpos, mass, com, q, qd):
    """Whole-body CoM position, velocity, Jacobian and Jdot qd."""
    nl = parent.shape[0]
    nq = nl + 2
    px, pz, th, vx, vz, om, ax, az = fk_bias_acc(parent, jpos, q, qd)
    mtot = 0.0
    for i in range(nl):
        mtot += mass[i]

    cpos = np.zeros(2)
    cvel = np.zeros(2)
    J = np.zeros((2, nq))
    jdqd = np.zeros(2)
    for i in range(nl):
        c = np.cos(th[i])
        s = np.sin(th[i])
        wx = c * com[i, 0] - s * com[i, 1]
        wz = s * com[i, 0] + c * com[i, 1]
        cx = px[i] + wx
        cz = pz[i] + wz
        w = mass[i] / mtot
        cpos[0] += w * cx
        cpos[1] += w * cz
        cvel[0] += w * (vx[i] - om[i] * wz)
        cvel[1] += w * (vz[i] + om[i] * wx)
        w2 = om[i] * om[i]
        jdqd[0] += w * (ax[i] - w2 * wx)
        jdqd[1] += w * (az[i] - w2 * wz)
        J[0, 0] += w
        J[1, 1] += w
        J[0, 2] += -w * (cz - pz[0])
        J[1, 2] += w * (cx - px[0])
        l = i
        while l > 0:
            J[0, 2 + l] += -w * (cz - pz[l])
            J[1, 2 + l] += w * (cx - px[l])
            l = parent[l]
    return cpos, cvel, J, jdqd


@njit(cache=True)
def contact_matrices(parent, jpos, q, qd, cbody, cptx, cptz, ckind):
    """Stacked contact Jacobian, bias acceleration and current pose.

    ckind: 0 = point (2 rows: x, z), 1 = flat (3 rows: x, z, pitch).
    pose holds the current world value of each constrained row, used for
    Baumgarte drift terms against stored anchors.
    """
    nl = parent.shape[0]
    nq = nl + 2
    ncon = cbody.shape[0]
    mrows = 0
    for k in range(ncon):
        mrows += 3 if ckind[k] == 1 else 2

    px, pz, th, vx, vz, om, ax, az = fk_bias_acc(parent, jpos, q, qd)
    J = np.zeros((mrows, nq))
    jdqd = np.zeros(mrows)
    pose = np.zeros(mrows)
    r = 0
    for k in range(ncon):
        b = cbody[k]
        c = np.cos(th[b])
        s = np.sin(th[b])
        wx = c * cptx[k] - s * cptz[k]
        wz = s * cptx[k] + c * cptz[k]
        gx = px[b] + wx
        gz = pz[b] + wz
        J[r, 0] = 1.0
        J[r + 1, 1] = 1.0
        J[r, 2] = -(gz - pz[0])
        J[r + 1, 2] = gx - px[0]
        l = b
        while l > 0:
            J[r, 2 + l] = -(gz - pz[l])
            J[r + 1, 2 + l] = gx - px[l]
            l = parent[l]
        w2 = om[b] * om[b]
        jdqd[r] = ax[b] - w2 * wx
        jdqd[r + 1] = az[b] - w2 * wz
        pose[r] = gx
        pose[r + 1] = gz
        if ckind[k] == 1:
            J[r + 2, 2] = 1.0
            l = b
            while l > 0:
                J[r + 2, 2 + l] = 1.0
                l = parent[l]
            pose[r + 2] = th[b]
            r += 3
        else:
            r += 2
    return J, jdqd, pose


@njit(cache=True)
def constrained_accel_kkt(
    parent, jpos, mass, com, inertia, gz, visc,
    cbody, cptx, cptz, ckind, anchors, q, qd, tau, alpha, beta,
):
    """Solve the contact KKT system for (qdd, lam) at one state.

    M qdd - Jc^T lam = S^T tau - h - visc*qd_joints
    Jc qdd           = -Jdot qd - 2 alpha (Jc qd) - beta (pose - anchors)
    """
    nq = parent.shape[0] + 2
    n = nq - 3
    M = crba(parent, jpos, mass, com, inertia, q)
    h = rnea(parent, jpos, mass, com, inertia, gz, q, qd, np.zeros(nq))
    Jc, jdqd, pose = contact_matrices(parent, jpos, q, qd, cbody, cptx, cptz, ckind)
    mrows = Jc.shape[0]
    K = np.zeros((nq + mrows, nq + mrows))
    K[:nq, :nq] = M
    rhs = np.empty(nq + mrows)
    rhs[:nq] = -h
    for j in range(n):
        rhs[3 + j] += tau[j] - visc[j] * qd[3 + j]
    if mrows > 0:
        K[:nq, nq:] = -Jc.T
        K[nq:, :nq] = Jc
        cdot = Jc @ qd
        rhs[nq:] = -jdqd - 2.0 * alpha * cdot - beta * (pose - anchors)
    sol = np.linalg.solve(K, rhs)
    return sol[:nq], sol[nq:]


@njit(cache=True)
def integrate(
    parent, jpos, mass, com, inertia, gz, visc,
    cbody, cptx, cptz, ckind, anchors, q, qd, tau, nsub, h, alpha, beta,
):
    """Semi-implicit Euler substeps under a zero-order-hold torque."""
    qn = q.copy()
    qdn = qd.copy()
    nq = qn.shape[0]
    qdd = np.zeros(nq)
    lam = np.zeros(anchors.shape[0])
    for _ in range(nsub):
        qdd, lam = constrained_accel_kkt(
            parent, jpos, mass, com, inertia, gz, visc,
            cbody, cptx, cptz, ckind, anchors, qn, qdn, tau, alpha, beta,
        )
        qdn = qdn + h * qdd
        qn = qn + h * qdn
    return qn, qdn, qdd, lam
