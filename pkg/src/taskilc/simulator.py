"""Ground-truth plant: contact-constrained dynamics under model mismatch.

The plant integrates the floating-base dynamics together with bilateral
kinematic contact constraints (Baumgarte-stabilized) using semi-implicit
Euler substeps. Mismatch against the controller's nominal model is
injected explicitly: per-link mass scaling, viscous joint friction the
controller never sees, a payload mass, and a gravity offset.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

from . import _kernels as _k
from . import model as tm
from .model import PlantState, RobotModel


class SimulationError(RuntimeError):
    pass


class SingularContactError(SimulationError):
    """Contact KKT matrix is singular; message carries a condition estimate."""


class NonFiniteStateError(SimulationError):
    """Integration produced NaN or inf; the episode must be aborted."""


@dataclass(frozen=True)
class MismatchSpec:
    """Deliberate nominal-vs-true plant discrepancy.

    mass_scale: per-link factors (unnamed links default to 1.0); a plain
    float scales every link. Scaling multiplies mass and rotational
    inertia together, so the whole inertia matrix scales linearly.
    viscous_friction: N m s/rad per joint, applied inside the plant only.
    payload: point mass rigidly attached to a link.
    gravity_delta: added to the nominal gravity magnitude.
    """

    mass_scale: Mapping[str, float] | float = 1.0
    viscous_friction: Mapping[str, float] | float = 0.0
    payload_mass: float = 0.0
    payload_link: str = ""
    payload_point: tuple[float, float] = (0.0, 0.0)
    gravity_delta: float = 0.0

    def scale_for(self, link: str) -> float:
        if isinstance(self.mass_scale, Mapping):
            return float(self.mass_scale.get(link, 1.0))
        return float(self.mass_scale)

    def friction_for(self, joint: str) -> float:
        if isinstance(self.viscous_friction, Mapping):
            return float(self.viscous_friction.get(joint, 0.0))
        return float(self.viscous_friction)

    def validate(self, model: RobotModel) -> None:
        for l in model.links:
            if l.mass * self.scale_for(l.name) <= 0.0:
                raise ValueError(f"mass_scale makes link {l.name!r} non-positive")
        for j in model.joints:
            if self.friction_for(j.name) < 0.0:
                raise ValueError(f"viscous_friction for {j.name!r} must be >= 0")
        if self.payload_mass < 0.0:
            raise ValueError("payload_mass must be >= 0")
        if self.payload_mass > 0.0 and self.payload_link not in {l.name for l in model.links}:
            raise ValueError(f"payload_link {self.payload_link!r} not in model")


IDENTITY_MISMATCH = MismatchSpec()

# all link masses +15%, light unmodeled joint damping, 2 kg on the torso;
# enough to produce clearly visible tracking error at the default gains
DEFAULT_MISMATCH = MismatchSpec(
    mass_scale=1.15,
    viscous_friction=0.5,
    payload_mass=2.0,
    payload_link="torso",
)


def apply_mismatch(nominal: RobotModel, mismatch: MismatchSpec) -> RobotModel:
    """True-plant model: nominal with the mismatch folded in."""
    mismatch.validate(nominal)
    links = []
    for l in nominal.links:
        s = mismatch.scale_for(l.name)
        mass = l.mass * s if s != 1.0 else l.mass
        inertia = l.inertia * s if s != 1.0 else l.inertia
        com = l.com
        if mismatch.payload_mass > 0.0 and l.name == mismatch.payload_link:
            mp = mismatch.payload_mass
            px, pz = mismatch.payload_point
            mtot = mass + mp
            cx = (mass * com[0] + mp * px) / mtot
            cz = (mass * com[1] + mp * pz) / mtot
            inertia = (inertia
                       + mass * ((com[0] - cx) ** 2 + (com[1] - cz) ** 2)
                       + mp * ((px - cx) ** 2 + (pz - cz) ** 2))
            mass, com = mtot, (cx, cz)
        links.append(replace(l, mass=mass, inertia=inertia, com=com))
    gravity = nominal.gravity + mismatch.gravity_delta
    if gravity == nominal.gravity and links == list(nominal.links):
        return nominal
    return replace(nominal, links=tuple(links), gravity=gravity)


@dataclass(frozen=True)
class PlantModel:
    """Immutable true plant: model, unmodeled friction and integration setup."""

    true_model: RobotModel
    viscous: np.ndarray          # (n,) N m s/rad per joint
    dt: float                    # control/sim step advanced by step()
    substep_dt: float            # internal integrator step
    alpha: float                 # Baumgarte velocity gain, 1/s
    beta: float                  # Baumgarte position gain, 1/s^2

    def __post_init__(self):
        object.__setattr__(self, "viscous", np.asarray(self.viscous, dtype=float))
        if self.dt <= 0.0 or self.substep_dt <= 0.0:
            raise ValueError("dt and substep_dt must be > 0")

    @property
    def substeps(self) -> int:
        return max(1, round(self.dt / self.substep_dt))


def make_plant(nominal: RobotModel, mismatch: MismatchSpec = IDENTITY_MISMATCH,
               dt: float = 1e-3, substep_dt: float = 1e-4,
               baumgarte: tuple[float, float] | None = None) -> PlantModel:
    """Build the true plant from the nominal model and a mismatch spec."""
    true_model = apply_mismatch(nominal, mismatch)
    visc = np.array([mismatch.friction_for(j.name) for j in nominal.joints])
    substep_dt = min(substep_dt, dt)
    if baumgarte is None:
        alpha = 0.05 * 2.0 / substep_dt
        beta = alpha * alpha / 4.0
    else:
        alpha, beta = baumgarte
    return PlantModel(true_model=true_model, viscous=visc, dt=dt,
                      substep_dt=substep_dt, alpha=alpha, beta=beta)


def init_state(plant: PlantModel, q, qdot=None, contacts: Sequence[str] | None = None,
               time: float = 0.0) -> PlantState:
    """State with contact anchors frozen at the current contact poses."""
    model = plant.true_model
    q = np.asarray(q, dtype=float)
    qdot = np.zeros(model.nq) if qdot is None else np.asarray(qdot, dtype=float)
    names = tuple(c.name for c in model.contacts) if contacts is None else tuple(contacts)
    _, _, pose = tm.contact_matrices(model, q, qdot, names)
    return PlantState(q=q, qdot=qdot, time=time, contacts=names, anchors=pose)


def _contact_arrays(plant: PlantModel, state: PlantState):
    model = plant.true_model
    a = model.arrays
    idx = np.array([next(i for i, c in enumerate(model.contacts) if c.name == n)
                    for n in state.contacts], dtype=np.int64)
    if len(idx) == 0:
        return (np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0),
                np.zeros(0, dtype=np.int64))
    return a.cbody[idx], a.cptx[idx], a.cptz[idx], a.ckind[idx]


def constrained_accel(plant: PlantModel, state: PlantState, tau) -> tuple[np.ndarray, np.ndarray]:
    """(qdd, lam) from the joint dynamics + contact KKT system.

    Satisfies M qdd + h + visc qd = S^T tau + Jc^T lam together with the
    Baumgarte-stabilized constraint
    Jc qdd + Jdot qd = -2 alpha (Jc qd) - beta (pose - anchors).
    """
    model = plant.true_model
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (model.n,):
        raise ValueError(f"tau must have length {model.n}")
    if not np.all(np.isfinite(tau)):
        raise ValueError("tau must be finite")
    a = model.arrays
    cb, cx, cz, ck = _contact_arrays(plant, state)
    try:
        qdd, lam = _k.constrained_accel_kkt(
            a.parent, a.jpos, a.mass, a.com, a.inertia, model.gravity,
            plant.viscous, cb, cx, cz, ck, state.anchors,
            state.q, state.qdot, tau, plant.alpha, plant.beta)
    except Exception as e:  # numba raises LinAlgError for singular systems
        cond = _kkt_condition(plant, state)
        raise SingularContactError(
            f"contact KKT system is singular (cond ~ {cond:.3e})") from e
    if not (np.all(np.isfinite(qdd)) and np.all(np.isfinite(lam))):
        cond = _kkt_condition(plant, state)
        raise SingularContactError(
            f"contact KKT solve produced non-finite values (cond ~ {cond:.3e})")
    return qdd, lam


def _kkt_condition(plant: PlantModel, state: PlantState) -> float:
    model = plant.true_model
    M = tm.mass_matrix(model, state.q)
    Jc, _, _ = tm.contact_matrices(model, state.q, state.qdot, state.contacts)
    nq, mc = model.nq, Jc.shape[0]
    K = np.zeros((nq + mc, nq + mc))
    K[:nq, :nq] = M
    K[:nq, nq:] = -Jc.T
    K[nq:, :nq] = Jc
    return float(np.linalg.cond(K))


def step(plant: PlantModel, state: PlantState, tau) -> PlantState:
    """Advance one control period with semi-implicit Euler substeps."""
    model = plant.true_model
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (model.n,):
        raise ValueError(f"tau must have length {model.n}")
    a = model.arrays
    cb, cx, cz, ck = _contact_arrays(plant, state)
    try:
        q, qd, _, lam = _k.integrate(
            a.parent, a.jpos, a.mass, a.com, a.inertia, model.gravity,
            plant.viscous, cb, cx, cz, ck, state.anchors,
            state.q, state.qdot, tau, plant.substeps, plant.substep_dt,
            plant.alpha, plant.beta)
    except Exception as e:
        cond = _kkt_condition(plant, state)
        raise SingularContactError(
            f"contact KKT system is singular (cond ~ {cond:.3e})") from e
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise NonFiniteStateError(
            f"non-finite plant state at t = {state.time + plant.dt:.4f} s")
    # bilateral constraints do not enforce unilaterality; flag pulling feet
    for name, fz in normal_forces(plant, state, lam).items():
        if fz < -1e-9:
            log.warning("contact %s normal force %.3e N < 0 at t = %.4f s",
                        name, fz, state.time + plant.dt)
    return PlantState(q=q, qdot=qd, time=state.time + plant.dt,
                      contacts=state.contacts, anchors=state.anchors)


def contact_drift(plant: PlantModel, state: PlantState) -> float:
    """Largest position-row deviation of active contacts from their anchors."""
    if len(state.contacts) == 0:
        return 0.0
    model = plant.true_model
    _, _, pose = tm.contact_matrices(model, state.q, state.qdot, state.contacts)
    dev = np.abs(pose - state.anchors)
    mask = np.ones(len(pose), dtype=bool)
    r = 0
    for name in state.contacts:
        c = model.contact(name)
        if c.kind == tm.FLAT:
            mask[r + 2] = False  # pitch row is rad, not m
            r += 3
        else:
            r += 2
    return float(dev[mask].max())


def normal_forces(plant: PlantModel, state: PlantState, lam) -> dict[str, float]:
    """Per-contact normal force from a stacked lambda vector."""
    out = {}
    r = 0
    for name in state.contacts:
        c = plant.true_model.contact(name)
        out[name] = float(lam[r + 1])
        r += c.rows
    return out
