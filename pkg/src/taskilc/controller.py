"""Per-tick inverse-dynamics QP controller on the nominal model.

Each control tick builds a dense QP over z = (qdd, lam):

    min  |J_t qdd + Jdot_t qd - xdd_des|^2_Wx
       + |P_null qdd - qdd_posture|^2_Wq
       + |lam - lam_des|^2_Wl
       + |tau(qdd, lam) - tau_des|^2_Wt

subject to the unactuated dynamics rows, the contact constraint
Jc qdd + Jdot_c qd = 0, and inequality limits on joint torques, joint
accelerations, normal forces, the friction cone and the center of
pressure. Torques are not decision variables: the actuated rows make
them affine in (qdd, lam),

    tau = M_a qdd + h_a - Jc_a^T lam,

which both eliminates them from the QP and recovers them afterwards.
The desired task acceleration splits into a feedforward part (planned
acceleration plus any learned correction) and a PD feedback part; the
split is recorded per tick so the learning loop can encode exactly what
the feedback contributed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import model as tm
from . import qp
from .model import PlantState, RobotModel


class ControlError(RuntimeError):
    """QP failure during a control tick; carries the tick diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TaskReference:
    """Task-space plan sample: position, velocity and planned acceleration."""

    x_ref: np.ndarray
    xdot_ref: np.ndarray
    xddot_ref: np.ndarray

    def __post_init__(self):
        for name in ("x_ref", "xdot_ref", "xddot_ref"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if v.shape != self.x_ref.shape:
                raise ValueError("task reference dimensions differ")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class ControlGains:
    """Task/posture PD gains, cost weights and limits for the QP."""

    p_task: np.ndarray        # 1/s^2, diagonal task stiffness
    d_task: np.ndarray        # 1/s, diagonal task damping
    p_posture: float = 50.0   # 1/s^2
    d_posture: float = 5.0    # 1/s
    w_task: np.ndarray | float = 1e4
    w_posture: float = 1.0
    w_force: float = 1e-3
    w_torque: float = 1e-4
    tau_max: np.ndarray | None = None    # N m, per joint; None: model limits
    qdd_max: np.ndarray | None = None    # rad/s^2, per joint
    mu: float | None = None              # None: model friction
    nullspace_damping: float = 1e-6

    def __post_init__(self):
        for name in ("p_task", "d_task"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if np.any(v < 0.0):
                raise ValueError(f"{name} must be >= 0")
        w = np.asarray(self.w_task, dtype=float)
        if w.ndim == 0:
            w = np.full(self.p_task.shape, float(w))
        if np.any(w <= 0.0):
            raise ValueError("w_task must be > 0 on every task dimension")
        object.__setattr__(self, "w_task", w)
        for name in ("w_posture", "w_force", "w_torque"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def defaults(cls, model: RobotModel, task_dim: int = 2) -> "ControlGains":
        return cls(
            p_task=np.full(task_dim, 400.0),
            d_task=np.full(task_dim, 40.0),
            tau_max=model.torque_limits.copy(),
            qdd_max=model.accel_limits.copy(),
            mu=model.friction_mu,
        )

    def reduced(self, factor: float = 0.2) -> "ControlGains":
        """Lower-stiffness profile: P' = factor * P, D' = sqrt(factor) * D."""
        return replace(self, p_task=factor * self.p_task,
                       d_task=np.sqrt(factor) * self.d_task)


@dataclass(frozen=True)
class ControlDiagnostics:
    xddot_des: np.ndarray
    feedback: np.ndarray         # PD part of xddot_des
    feedforward: np.ndarray      # xddot_ref + learned correction
    ff_learned: np.ndarray       # learned correction alone
    qddot: np.ndarray
    lam: np.ndarray
    tau: np.ndarray
    qp_status: str
    qp_iterations: int
    qp_residuals: qp.KktResiduals
    objective: float
    cop: dict[str, tuple[float, float, float]]  # name -> (offset, heel, toe)


def desired_task_accel(ref: TaskReference, x, xdot, gains: ControlGains,
                       ff=None) -> tuple[np.ndarray, np.ndarray]:
    """PD task law with optional learned feedforward.

    Returns (xddot_des, feedback); xddot_des is exactly the sum of the
    feedforward part (xddot_ref + ff) and the returned feedback part.
    """
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    if x.shape != ref.x_ref.shape or xdot.shape != ref.x_ref.shape:
        raise ValueError("measurement dimensions differ from the reference")
    feedback = gains.p_task * (ref.x_ref - x) + gains.d_task * (ref.xdot_ref - xdot)
    ff_learned = np.zeros_like(ref.x_ref) if ff is None else np.asarray(ff, dtype=float)
    feedforward = ref.xddot_ref + ff_learned
    return feedforward + feedback, feedback


def posture_desired_accel(q_ref, state: PlantState, gains: ControlGains) -> np.ndarray:
    """Joint-space PD posture target; base coordinates get no command."""
    q_ref = np.asarray(q_ref, dtype=float)
    if q_ref.shape != state.q.shape:
        raise ValueError("posture reference length differs from the state")
    out = np.zeros_like(state.q)
    out[3:] = gains.p_posture * (q_ref[3:] - state.q[3:]) \
        - gains.d_posture * state.qdot[3:]
    return out


def nullspace_projector(J_task: np.ndarray, damping: float = 1e-6) -> np.ndarray:
    """P = I - J^+ J with a damped pseudoinverse; never fails on rank loss."""
    J = np.asarray(J_task, dtype=float)
    m, n = J.shape
    JJt = J @ J.T + damping ** 2 * np.eye(m)
    J_pinv = J.T @ np.linalg.solve(JJt, np.eye(m))
    return np.eye(n) - J_pinv @ J


def _contact_layout(model: RobotModel, contacts):
    sel = list(model.contacts) if contacts is None else \
        [model.contact(n) for n in contacts]
    offsets = []
    r = 0
    for c in sel:
        offsets.append(r)
        r += c.rows
    return sel, offsets, r


def default_lambda_des(model: RobotModel, contacts=None) -> np.ndarray:
    """Even weight split: each contact carries total weight / #contacts."""
    sel, offsets, mc = _contact_layout(model, contacts)
    lam = np.zeros(mc)
    if sel:
        share = model.total_mass * model.gravity / len(sel)
        for c, r in zip(sel, offsets):
            lam[r + 1] = share
    return lam


def assemble_qp(nominal: RobotModel, state: PlantState, xddot_des,
                posture_des, gains: ControlGains,
                contacts: Sequence[str] | None = None,
                lam_des=None, tau_des=None) -> qp.QpProblem:
    """Build the per-tick QP over z = (qdd, lam) on the nominal model."""
    xddot_des = np.asarray(xddot_des, dtype=float)
    posture_des = np.asarray(posture_des, dtype=float)
    nq, n = nominal.nq, nominal.n
    sel, offsets, mc = _contact_layout(nominal, contacts)
    if mc == 0:
        raise ValueError("no contacts active; the controller needs stance contacts")
    d = nq + mc

    M = tm.mass_matrix(nominal, state.q)
    h = tm.bias_forces(nominal, state.q, state.qdot)
    Jc, jdqd_c, _ = tm.contact_matrices(
        nominal, state.q, state.qdot,
        None if contacts is None else list(contacts))
    com = tm.com_state(nominal, state.q, state.qdot)
    Jt = com.jacobian
    if xddot_des.shape != (Jt.shape[0],):
        raise ValueError("xddot_des dimension differs from the task")
    if posture_des.shape != (nq,):
        raise ValueError("posture_des must have length nq")

    M_a = M[3:, :]
    h_a = h[3:]
    Jca_T = Jc[:, 3:].T
    tau_des = np.zeros(n) if tau_des is None else np.asarray(tau_des, dtype=float)
    lam_des = default_lambda_des(nominal, contacts) if lam_des is None \
        else np.asarray(lam_des, dtype=float)

    # cost: 2 sum A^T W A, -2 sum A^T W b over the four tracking blocks
    A_task = np.zeros((Jt.shape[0], d))
    A_task[:, :nq] = Jt
    b_task = xddot_des - com.jdot_qdot

    P_null = nullspace_projector(Jt, gains.nullspace_damping)
    A_post = np.zeros((nq, d))
    A_post[:, :nq] = P_null

    A_tau = np.zeros((n, d))
    A_tau[:, :nq] = M_a
    A_tau[:, nq:] = -Jca_T
    b_tau = tau_des - h_a

    H = 2.0 * (
        (A_task.T * gains.w_task) @ A_task
        + gains.w_posture * (A_post.T @ A_post)
        + gains.w_torque * (A_tau.T @ A_tau)
    )
    H[nq:, nq:] += 2.0 * gains.w_force * np.eye(mc)
    H = 0.5 * (H + H.T)
    g = -2.0 * (
        A_task.T @ (gains.w_task * b_task)
        + gains.w_posture * (A_post.T @ posture_des)
        + gains.w_torque * (A_tau.T @ b_tau)
    )
    g[nq:] += -2.0 * gains.w_force * lam_des

    # equalities: unactuated dynamics rows and the contact constraint
    A_eq = np.zeros((3 + mc, d))
    A_eq[:3, :nq] = M[:3, :]
    A_eq[:3, nq:] = -Jc[:, :3].T
    A_eq[3:, :nq] = Jc
    b_eq = np.concatenate([-h[:3], -jdqd_c])

    # inequalities
    mu = nominal.friction_mu if gains.mu is None else gains.mu
    tau_max = nominal.torque_limits if gains.tau_max is None else gains.tau_max
    qdd_max = nominal.accel_limits if gains.qdd_max is None else gains.qdd_max
    rows = [A_tau, -A_tau]
    rhs = [tau_max - h_a, tau_max + h_a]
    E = np.zeros((n, d))
    E[:, 3:nq] = np.eye(n)
    rows += [E, -E]
    rhs += [qdd_max, qdd_max]
    for c, r in zip(sel, offsets):
        col = nq + r
        fz = np.zeros(d)
        fz[col + 1] = 1.0
        fx = np.zeros(d)
        fx[col] = 1.0
        rows.append(np.stack([-fz, fx - mu * fz, -fx - mu * fz]))
        rhs.append(np.zeros(3))
        if c.kind == tm.FLAT:
            heel, toe = c.support
            m_row = np.zeros(d)
            m_row[col + 2] = 1.0
            # cop = m / fz within [heel, toe] (offsets from the sole frame)
            rows.append(np.stack([m_row - toe * fz, -m_row + heel * fz]))
            rhs.append(np.zeros(2))
    A_in = np.vstack(rows)
    b_in = np.concatenate(rhs)

    names = tuple(f"qdd_{i}" for i in range(nq)) + tuple(
        f"lam_{c.name}_{p}" for c in sel
        for p in (("fx", "fz", "m") if c.kind == tm.FLAT else ("fx", "fz")))
    return qp.QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
                        names=names)


def extract_torques(nominal: RobotModel, state: PlantState, qddot, lam,
                    contacts: Sequence[str] | None = None) -> np.ndarray:
    """Actuated-row torques tau = M_a qdd + h_a - Jc_a^T lam."""
    qddot = np.asarray(qddot, dtype=float)
    lam = np.asarray(lam, dtype=float)
    M = tm.mass_matrix(nominal, state.q)
    h = tm.bias_forces(nominal, state.q, state.qdot)
    Jc, _, _ = tm.contact_matrices(
        nominal, state.q, state.qdot,
        None if contacts is None else list(contacts))
    return M[3:, :] @ qddot + h[3:] - Jc[:, 3:].T @ lam


def cop_offsets(model: RobotModel, lam, contacts=None,
                min_normal: float = 1e-9) -> dict[str, tuple[float, float, float]]:
    """Per flat contact: (cop offset from the sole frame, heel, toe)."""
    sel, offsets, _ = _contact_layout(model, contacts)
    out = {}
    for c, r in zip(sel, offsets):
        if c.kind != tm.FLAT:
            continue
        fz = lam[r + 1]
        m = lam[r + 2]
        heel, toe = c.support
        off = m / fz if abs(fz) > min_normal else 0.0
        out[c.name] = (float(off), heel, toe)
    return out


def control_step(nominal: RobotModel, state: PlantState, ref: TaskReference,
                 posture_ref, gains: ControlGains, ff=None,
                 contacts: Sequence[str] | None = None,
                 settings: qp.QpSettings | None = None,
                 warm: qp.QpSolution | None = None
                 ) -> tuple[np.ndarray, ControlDiagnostics]:
    """One tick: task law, QP assembly and solve, torque extraction."""
    com = tm.com_state(nominal, state.q, state.qdot)
    xdd_des, feedback = desired_task_accel(ref, com.position, com.velocity,
                                           gains, ff)
    ff_learned = np.zeros_like(ref.x_ref) if ff is None else np.asarray(ff, dtype=float)
    posture_des = posture_desired_accel(posture_ref, state, gains)
    problem = assemble_qp(nominal, state, xdd_des, posture_des, gains,
                          contacts=contacts)
    sol = qp.solve(problem, settings=settings, warm=warm)
    nq = nominal.nq
    qddot = sol.z[:nq]
    lam = sol.z[nq:]
    tau = extract_torques(nominal, state, qddot, lam, contacts)
    diag = ControlDiagnostics(
        xddot_des=xdd_des, feedback=feedback,
        feedforward=ref.xddot_ref + ff_learned, ff_learned=ff_learned,
        qddot=qddot, lam=lam, tau=tau,
        qp_status=sol.status, qp_iterations=sol.iterations,
        qp_residuals=sol.residuals, objective=sol.objective,
        cop=cop_offsets(nominal, lam, contacts))
    if sol.status != qp.OPTIMAL:
        raise ControlError(
            f"QP solve failed with status {sol.status!r} "
            f"(residuals {sol.residuals})", diagnostics=diag)
    return tau, diag
