"""Planar floating-base robot description and dynamics quantities.

A robot is a tree of rigid links in the sagittal (x, z) plane, rooted at
a 3-DoF floating base (x, z translation plus pitch) and connected by
revolute joints whose axis points out of the plane (counterclockwise
positive). Generalized coordinates are

    q = [base_x (m), base_z (m), base_pitch (rad), joint_1 .. joint_n (rad)]

for n actuated joints, nq = n + 3 coordinates in total. Gravity acts
along -z.

Models are loaded from a versioned YAML descriptor with explicit units
in the field names; see ``load_model`` and ``data/biped.yaml``. A loaded
``RobotModel`` is immutable and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import yaml

from . import _kernels as _k

FORMAT_VERSION = "planar-robot/1"

POINT = 0  # single-point contact: rows (x, z)
FLAT = 1   # flat-foot contact: rows (x, z, pitch), wrench force


class ModelError(ValueError):
    """Descriptor parsing or validation failure; message names the field."""


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float            # kg
    inertia: float         # kg m^2 about the link CoM
    com: tuple[float, float]  # m, in the link frame


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    child: str
    origin: tuple[float, float]   # m, joint anchor in the parent frame
    limit: tuple[float, float]    # rad
    torque_limit: float           # N m
    accel_limit: float            # rad/s^2
    axis: str = "ccw"             # only revolute, out-of-plane CCW axis


@dataclass(frozen=True)
class ContactSpec:
    """One contact on a link: a single point or a flat sole segment.

    ``points`` are body-fixed. Two or more points on a common sole line
    make a flat contact whose constrained frame sits at the centroid of
    the points; the support extent [heel, toe] is expressed relative to
    that reference point.
    """

    name: str
    link: str
    points: tuple[tuple[float, float], ...]

    @property
    def kind(self) -> int:
        return FLAT if len(self.points) > 1 else POINT

    @property
    def ref_point(self) -> tuple[float, float]:
        xs = [p[0] for p in self.points]
        zs = [p[1] for p in self.points]
        return (sum(xs) / len(xs), sum(zs) / len(zs))

    @property
    def support(self) -> tuple[float, float]:
        """(heel, toe) x-offsets from the reference point, heel <= toe."""
        rx = self.ref_point[0]
        xs = [p[0] - rx for p in self.points]
        return (min(xs), max(xs))

    @property
    def rows(self) -> int:
        return 3 if self.kind == FLAT else 2


class ModelArrays(NamedTuple):
    """Flat array form consumed by the numba kernels."""

    parent: np.ndarray
    jpos: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    cbody: np.ndarray
    cptx: np.ndarray
    cptz: np.ndarray
    ckind: np.ndarray


@dataclass(frozen=True)
class RobotModel:
    name: str
    base_link: str
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    contacts: tuple[ContactSpec, ...]
    gravity: float                 # m/s^2, magnitude, acts downward
    friction_mu: float
    format_version: str = FORMAT_VERSION

    @property
    def n(self) -> int:
        """Number of actuated joints."""
        return len(self.joints)

    @property
    def nq(self) -> int:
        """Number of generalized coordinates (n + 3)."""
        return self.n + 3

    @cached_property
    def total_mass(self) -> float:
        return float(sum(l.mass for l in self.links))

    @cached_property
    def link_index(self) -> dict[str, int]:
        order = self._link_order
        return {name: i for i, name in enumerate(order)}

    @cached_property
    def _link_order(self) -> tuple[str, ...]:
        """Links in topological order: base first, then joint-file order."""
        order = [self.base_link]
        for j in self.joints:
            order.append(j.child)
        return tuple(order)

    @cached_property
    def arrays(self) -> ModelArrays:
        by_name = {l.name: l for l in self.links}
        order = self._link_order
        nl = len(order)
        parent = np.full(nl, -1, dtype=np.int64)
        jpos = np.zeros((nl, 2))
        mass = np.zeros(nl)
        com = np.zeros((nl, 2))
        inertia = np.zeros(nl)
        idx = {name: i for i, name in enumerate(order)}
        for i, name in enumerate(order):
            l = by_name[name]
            mass[i] = l.mass
            com[i] = l.com
            inertia[i] = l.inertia
        for j in self.joints:
            ci = idx[j.child]
            parent[ci] = idx[j.parent]
            jpos[ci] = j.origin
        cbody = np.array([idx[c.link] for c in self.contacts], dtype=np.int64)
        cptx = np.array([c.ref_point[0] for c in self.contacts])
        cptz = np.array([c.ref_point[1] for c in self.contacts])
        ckind = np.array([c.kind for c in self.contacts], dtype=np.int64)
        return ModelArrays(parent, jpos, mass, com, inertia,
                           cbody, cptx, cptz, ckind)

    @cached_property
    def contact_rows(self) -> int:
        return sum(c.rows for c in self.contacts)

    @cached_property
    def torque_limits(self) -> np.ndarray:
        return np.array([j.torque_limit for j in self.joints])

    @cached_property
    def accel_limits(self) -> np.ndarray:
        return np.array([j.accel_limit for j in self.joints])

    @cached_property
    def position_limits(self) -> np.ndarray:
        return np.array([j.limit for j in self.joints])

    def contact(self, name: str) -> ContactSpec:
        for c in self.contacts:
            if c.name == name:
                return c
        raise KeyError(f"unknown contact {name!r}")


@dataclass(frozen=True)
class PlantState:
    """Generalized state of the simulated plant.

    ``contacts`` names the active constraints; ``anchors`` stores the
    world pose each constrained row is held at (set when the state is
    created, since contacts never break during an episode).
    """

    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0
    contacts: tuple[str, ...] = ()
    anchors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float))
        object.__setattr__(self, "anchors", np.asarray(self.anchors, dtype=float))
        if self.q.shape != self.qdot.shape:
            raise ValueError("q and qdot lengths differ")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("non-finite entries in plant state")


# ---------------------------------------------------------------------------
# descriptor I/O

def _req(mapping, key, path, types):
    if key not in mapping:
        raise ModelError(f"{path}: missing required field {key!r}")
    v = mapping[key]
    if not isinstance(v, types):
        raise ModelError(f"{path}.{key}: expected {types}, got {type(v).__name__}")
    return v


def _pair(v, path):
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ModelError(f"{path}: expected a [x, z] pair")
    return (float(v[0]), float(v[1]))


def model_from_dict(doc: dict, source: str = "<dict>") -> RobotModel:
    version = _req(doc, "format", source, str)
    if version != FORMAT_VERSION:
        raise ModelError(f"{source}.format: unsupported version {version!r}")
    name = _req(doc, "name", source, str)
    gravity = float(_req(doc, "gravity_mps2", source, (int, float)))
    mu = float(_req(doc, "friction_mu", source, (int, float)))
    base = _req(doc, "base_link", source, str)

    links = []
    for i, ld in enumerate(_req(doc, "links", source, list)):
        path = f"links[{i}]"
        links.append(LinkSpec(
            name=_req(ld, "name", path, str),
            mass=float(_req(ld, "mass_kg", path, (int, float))),
            inertia=float(_req(ld, "inertia_kgm2", path, (int, float))),
            com=_pair(_req(ld, "com_m", path, list), f"{path}.com_m"),
        ))
    joints = []
    for i, jd in enumerate(doc.get("joints", [])):
        path = f"joints[{i}]"
        lim = _req(jd, "limit_rad", path, list)
        joints.append(JointSpec(
            name=_req(jd, "name", path, str),
            parent=_req(jd, "parent", path, str),
            child=_req(jd, "child", path, str),
            origin=_pair(_req(jd, "origin_m", path, list), f"{path}.origin_m"),
            axis=jd.get("axis", "ccw"),
            limit=(float(lim[0]), float(lim[1])),
            torque_limit=float(_req(jd, "torque_limit_nm", path, (int, float))),
            accel_limit=float(_req(jd, "accel_limit_radps2", path, (int, float))),
        ))
    contacts = []
    for i, cd in enumerate(doc.get("contacts", [])):
        path = f"contacts[{i}]"
        pts = _req(cd, "points_m", path, list)
        contacts.append(ContactSpec(
            name=_req(cd, "name", path, str),
            link=_req(cd, "link", path, str),
            points=tuple(_pair(p, f"{path}.points_m[{k}]") for k, p in enumerate(pts)),
        ))

    model = RobotModel(
        name=name, base_link=base, links=tuple(links), joints=tuple(joints),
        contacts=tuple(contacts), gravity=gravity, friction_mu=mu,
        format_version=version,
    )
    _validate(model, source)
    return model


def _validate(model: RobotModel, source: str) -> None:
    names = set()
    for i, l in enumerate(model.links):
        if l.mass <= 0.0:
            raise ModelError(f"{source}.links[{i}] ({l.name}): mass_kg must be > 0")
        if l.inertia <= 0.0:
            raise ModelError(f"{source}.links[{i}] ({l.name}): inertia_kgm2 must be > 0")
        if l.name in names:
            raise ModelError(f"{source}.links[{i}]: duplicate link name {l.name!r}")
        names.add(l.name)
    if model.friction_mu < 0.0:
        raise ModelError(f"{source}.friction_mu: must be >= 0")
    if model.base_link not in names:
        raise ModelError(f"{source}.base_link: unknown link {model.base_link!r}")
    if model.n < 1:
        raise ModelError(f"{source}.joints: at least one joint required")

    # tree: every non-base link has exactly one parent joint, parents appear
    # before children, no cycles, everything reachable from the base
    seen_children = set()
    known = {model.base_link}
    for i, j in enumerate(model.joints):
        if j.axis != "ccw":
            raise ModelError(f"{source}.joints[{i}].axis: only 'ccw' revolute joints")
        if j.parent not in names:
            raise ModelError(f"{source}.joints[{i}].parent: unknown link {j.parent!r}")
        if j.child not in names:
            raise ModelError(f"{source}.joints[{i}].child: unknown link {j.child!r}")
        if j.child in seen_children:
            raise ModelError(f"{source}.joints[{i}].child: {j.child!r} has two parents")
        if j.child == model.base_link:
            raise ModelError(f"{source}.joints[{i}].child: base link cannot be a child")
        if j.parent not in known:
            raise ModelError(
                f"{source}.joints[{i}].parent: {j.parent!r} not connected to the base "
                "yet (list joints parent-first)")
        if j.limit[0] > j.limit[1]:
            raise ModelError(f"{source}.joints[{i}].limit_rad: lo > hi")
        seen_children.add(j.child)
        known.add(j.child)
    if known != names:
        missing = sorted(names - known)
        raise ModelError(f"{source}: links {missing} are not connected to the base")

    for i, c in enumerate(model.contacts):
        if c.link not in names:
            raise ModelError(f"{source}.contacts[{i}].link: unknown link {c.link!r}")
        if len(c.points) == 0:
            raise ModelError(f"{source}.contacts[{i}].points_m: needs >= 1 point")
        if len(c.points) > 1:
            zs = {p[1] for p in c.points}
            if max(zs) - min(zs) > 1e-12:
                raise ModelError(
                    f"{source}.contacts[{i}].points_m: flat contact points must "
                    "share one sole height")


def load_model(path) -> RobotModel:
    """Load and validate a robot descriptor file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ModelError(f"{path}: not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ModelError(f"{path}: descriptor must be a mapping")
    return model_from_dict(doc, source=str(path))


def model_to_dict(model: RobotModel) -> dict:
    return {
        "format": model.format_version,
        "name": model.name,
        "gravity_mps2": model.gravity,
        "friction_mu": model.friction_mu,
        "base_link": model.base_link,
        "links": [
            {"name": l.name, "mass_kg": l.mass, "inertia_kgm2": l.inertia,
             "com_m": list(l.com)}
            for l in model.links
        ],
        "joints": [
            {"name": j.name, "parent": j.parent, "child": j.child,
             "origin_m": list(j.origin), "axis": j.axis,
             "limit_rad": list(j.limit), "torque_limit_nm": j.torque_limit,
             "accel_limit_radps2": j.accel_limit}
            for j in model.joints
        ],
        "contacts": [
            {"name": c.name, "link": c.link, "points_m": [list(p) for p in c.points]}
            for c in model.contacts
        ],
    }


def save_model(model: RobotModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(model_to_dict(model), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# dynamics quantities

def _check_q(model: RobotModel, q, name="q") -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.nq,):
        raise ValueError(f"{name} must have length {model.nq}, got {q.shape}")
    return q


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Joint-space inertia matrix M(q), (nq x nq), via CRBA."""
    q = _check_q(model, q)
    a = model.arrays
    return _k.crba(a.parent, a.jpos, a.mass, a.com, a.inertia, q)


def bias_forces(model: RobotModel, q, qdot) -> np.ndarray:
    """Nonlinear terms h(q, qd): Coriolis, centrifugal and gravity."""
    q = _check_q(model, q)
    qd = _check_q(model, qdot, "qdot")
    a = model.arrays
    return _k.rnea(a.parent, a.jpos, a.mass, a.com, a.inertia,
                   model.gravity, q, qd, np.zeros(model.nq))


def inverse_dynamics(model: RobotModel, q, qdot, qddot) -> np.ndarray:
    """Generalized forces M qdd + h realizing qddot at (q, qd)."""
    q = _check_q(model, q)
    qd = _check_q(model, qdot, "qdot")
    qdd = _check_q(model, qddot, "qddot")
    a = model.arrays
    return _k.rnea(a.parent, a.jpos, a.mass, a.com, a.inertia,
                   model.gravity, q, qd, qdd)


def _body_index(model: RobotModel, body) -> int:
    if isinstance(body, str):
        try:
            return model.link_index[body]
        except KeyError:
            raise KeyError(f"unknown body {body!r}") from None
    return int(body)


def point_position(model: RobotModel, q, body, point=(0.0, 0.0)) -> np.ndarray:
    """World (x, z) of a body-fixed point."""
    q = _check_q(model, q)
    b = _body_index(model, body)
    a = model.arrays
    wx, wz, _ = _k.world_point(a.parent, a.jpos, q, b, float(point[0]), float(point[1]))
    return np.array([wx, wz])


def point_jacobian(model: RobotModel, q, body, point=(0.0, 0.0),
                   with_pitch: bool = False) -> np.ndarray:
    """2x(nq) point Jacobian; with_pitch adds the body pitch row (3xnq)."""
    q = _check_q(model, q)
    b = _body_index(model, body)
    a = model.arrays
    return _k.point_jacobian(a.parent, a.jpos, q, b,
                             float(point[0]), float(point[1]), with_pitch)


def point_velocity(model: RobotModel, q, qdot, body, point=(0.0, 0.0)) -> np.ndarray:
    J = point_jacobian(model, q, body, point)
    return J @ np.asarray(qdot, dtype=float)


def jacobian_dot_times_qdot(model: RobotModel, q, qdot, body, point=(0.0, 0.0),
                            with_pitch: bool = False) -> np.ndarray:
    """Point acceleration under qdd = 0, i.e. Jdot(q, qd) qd."""
    q = _check_q(model, q)
    qd = _check_q(model, qdot, "qdot")
    b = _body_index(model, body)
    a = model.arrays
    ax, az = _k.point_bias_acc(a.parent, a.jpos, q, qd, b,
                               float(point[0]), float(point[1]))
    if with_pitch:
        return np.array([ax, az, 0.0])  # pitch row of J is constant
    return np.array([ax, az])


class ComState(NamedTuple):
    position: np.ndarray   # (2,)
    velocity: np.ndarray   # (2,)
    jacobian: np.ndarray   # (2, nq)
    jdot_qdot: np.ndarray  # (2,)


def com_state(model: RobotModel, q, qdot) -> ComState:
    """Whole-body center-of-mass kinematics."""
    q = _check_q(model, q)
    qd = _check_q(model, qdot, "qdot")
    a = model.arrays
    pos, vel, J, jdqd = _k.com_state(a.parent, a.jpos, a.mass, a.com, q, qd)
    return ComState(pos, vel, J, jdqd)


class LinkState(NamedTuple):
    name: str
    com_position: np.ndarray
    com_velocity: np.ndarray
    angle: float
    omega: float


def link_com_states(model: RobotModel, q, qdot) -> list[LinkState]:
    """Per-link CoM kinematics, computed from forward kinematics only.

    Used by energy checks that must stay independent of the mass-matrix
    path: kinetic energy summed over these states never touches CRBA.
    """
    q = _check_q(model, q)
    qd = _check_q(model, qdot, "qdot")
    a = model.arrays
    px, pz, th, vx, vz, om = _k.fk_vel(a.parent, a.jpos, q, qd)
    out = []
    for i, name in enumerate(model._link_order):
        c, s = math.cos(th[i]), math.sin(th[i])
        wx = c * a.com[i, 0] - s * a.com[i, 1]
        wz = s * a.com[i, 0] + c * a.com[i, 1]
        out.append(LinkState(
            name=name,
            com_position=np.array([px[i] + wx, pz[i] + wz]),
            com_velocity=np.array([vx[i] - om[i] * wz, vz[i] + om[i] * wx]),
            angle=float(th[i]),
            omega=float(om[i]),
        ))
    return out


def kinetic_energy(model: RobotModel, q, qdot) -> float:
    """Sum of per-link translational and rotational kinetic energy."""
    a = model.arrays
    total = 0.0
    for i, st in enumerate(link_com_states(model, q, qdot)):
        v2 = float(st.com_velocity @ st.com_velocity)
        total += 0.5 * a.mass[i] * v2 + 0.5 * a.inertia[i] * st.omega ** 2
    return total


def potential_energy(model: RobotModel, q) -> float:
    """Gravitational potential, zero level at z = 0."""
    a = model.arrays
    qz = np.zeros(model.nq)
    total = 0.0
    for i, st in enumerate(link_com_states(model, q, qz)):
        total += a.mass[i] * model.gravity * st.com_position[1]
    return total


def contact_matrices(model: RobotModel, q, qdot, contacts: Sequence[str] | None = None):
    """(Jc, Jdot qd, pose) stacked over the requested contacts.

    Row layout per contact: point -> (x, z); flat -> (x, z, pitch).
    ``pose`` holds the current world value of each row.
    """
    q = _check_q(model, q)
    qd = _check_q(model, qdot, "qdot")
    a = model.arrays
    if contacts is None:
        if len(model.contacts) == 0:
            return np.zeros((0, model.nq)), np.zeros(0), np.zeros(0)
        return _k.contact_matrices(a.parent, a.jpos, q, qd,
                                   a.cbody, a.cptx, a.cptz, a.ckind)
    sel = _select_contacts(model, contacts)
    idx = np.array([model.contacts.index(c) for c in sel], dtype=np.int64)
    if len(idx) == 0:
        return np.zeros((0, model.nq)), np.zeros(0), np.zeros(0)
    return _k.contact_matrices(a.parent, a.jpos, q, qd,
                               a.cbody[idx], a.cptx[idx], a.cptz[idx], a.ckind[idx])


def _select_contacts(model: RobotModel, contacts) -> list[ContactSpec]:
    if contacts is None:
        return list(model.contacts)
    return [model.contact(name) for name in contacts]
