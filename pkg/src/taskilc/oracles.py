"""Independent numerical oracles for cross-checking the dynamics stack.

Everything here deliberately avoids the code path it is used to check:
Jacobians come from finite differences of forward kinematics, the mass
matrix from unit-acceleration inverse dynamics columns, bias forces from
finite differences of the energies, and static equilibria from a direct
least-squares solve of the stance wrench balance. Used by the test suite
and by the ``taskilc verify`` command.
"""

from __future__ import annotations

import numpy as np

from . import model as tm


def fd_point_jacobian(model, q, body, point=(0.0, 0.0), eps: float = 1e-7):
    """Central finite differences of point forward kinematics."""
    q = np.asarray(q, dtype=float)
    J = np.zeros((2, model.nq))
    for i in range(model.nq):
        qp = q.copy()
        qm = q.copy()
        qp[i] += eps
        qm[i] -= eps
        J[:, i] = (tm.point_position(model, qp, body, point)
                   - tm.point_position(model, qm, body, point)) / (2 * eps)
    return J


def fd_com_jacobian(model, q, eps: float = 1e-7):
    q = np.asarray(q, dtype=float)
    qz = np.zeros(model.nq)
    J = np.zeros((2, model.nq))
    for i in range(model.nq):
        qp = q.copy()
        qm = q.copy()
        qp[i] += eps
        qm[i] -= eps
        J[:, i] = (tm.com_state(model, qp, qz).position
                   - tm.com_state(model, qm, qz).position) / (2 * eps)
    return J


def fd_jacobian_dot_times_qdot(model, q, qdot, body, point=(0.0, 0.0),
                               eps: float = 1e-7):
    """(J(q + qd*eps) - J(q)) / eps @ qd, forward difference along the flow."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qdot, dtype=float)
    J0 = tm.point_jacobian(model, q, body, point)
    J1 = tm.point_jacobian(model, q + eps * qd, body, point)
    return (J1 - J0) / eps @ qd


def mass_matrix_from_inverse_dynamics(model, q):
    """Column j of M is ID(q, 0, e_j) - ID(q, 0, 0)."""
    q = np.asarray(q, dtype=float)
    nq = model.nq
    qz = np.zeros(nq)
    h = tm.inverse_dynamics(model, q, qz, qz)
    M = np.zeros((nq, nq))
    for j in range(nq):
        e = np.zeros(nq)
        e[j] = 1.0
        M[:, j] = tm.inverse_dynamics(model, q, qz, e) - h
    return M


def kinetic_energy_quadratic_form(model, q, qdot):
    """0.5 qd^T M qd via the mass matrix (the path under test)."""
    M = tm.mass_matrix(model, q)
    qd = np.asarray(qdot, dtype=float)
    return 0.5 * float(qd @ M @ qd)


def fd_bias_forces(model, q, qdot, eps: float = 1e-6):
    """Lagrangian identity d/dt(dT/dqd) - dT/dq + dV/dq at qdd = 0.

    All three terms are finite differences of the energy functions, which
    never touch the recursive Newton-Euler path.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qdot, dtype=float)
    nq = model.nq

    def dT_dqd(qq, qqd):
        g = np.zeros(nq)
        for i in range(nq):
            dp = qqd.copy()
            dm = qqd.copy()
            dp[i] += eps
            dm[i] -= eps
            g[i] = (tm.kinetic_energy(model, qq, dp)
                    - tm.kinetic_energy(model, qq, dm)) / (2 * eps)
        return g

    # d/dt of dT/dqd along the flow with qdd = 0: directional derivative in q
    ddt = (dT_dqd(q + eps * qd, qd) - dT_dqd(q - eps * qd, qd)) / (2 * eps)

    dT_dq = np.zeros(nq)
    dV_dq = np.zeros(nq)
    for i in range(nq):
        qp = q.copy()
        qm = q.copy()
        qp[i] += eps
        qm[i] -= eps
        dT_dq[i] = (tm.kinetic_energy(model, qp, qd)
                    - tm.kinetic_energy(model, qm, qd)) / (2 * eps)
        dV_dq[i] = (tm.potential_energy(model, qp)
                    - tm.potential_energy(model, qm)) / (2 * eps)
    return ddt - dT_dq + dV_dq


def fd_potential_gradient(model, q, eps: float = 1e-6):
    q = np.asarray(q, dtype=float)
    g = np.zeros(model.nq)
    for i in range(model.nq):
        qp = q.copy()
        qm = q.copy()
        qp[i] += eps
        qm[i] -= eps
        g[i] = (tm.potential_energy(model, qp)
                - tm.potential_energy(model, qm)) / (2 * eps)
    return g


def static_equilibrium(model, q, contacts=None):
    """Minimum-norm (tau, lam) with S^T tau + Jc^T lam = h(q, 0).

    Solves the stance wrench balance directly by least squares; returns
    (tau, lam). Independent of both the simulator KKT path and the
    controller QP.
    """
    q = np.asarray(q, dtype=float)
    nq = model.nq
    n = model.n
    h = tm.bias_forces(model, q, np.zeros(nq))
    Jc, _, _ = tm.contact_matrices(model, q, np.zeros(nq), contacts)
    A = np.hstack([np.vstack([np.zeros((3, n)), np.eye(n)]), Jc.T])
    sol, *_ = np.linalg.lstsq(A, h, rcond=None)
    return sol[:n], sol[n:]
