"""Plant construction, constrained dynamics and integration checks."""

import numpy as np
import pytest

from taskilc import model as tm
from taskilc import oracles
from taskilc import simulator as sim
from taskilc.harness import stance_q

from conftest import random_state


def standing(plant, crouch=0.55):
    q = stance_q(plant.true_model, crouch)
    return sim.init_state(plant, q)


# ---------------------------------------------------------------------------
# make_plant / mismatch

def test_identity_mismatch_matches_nominal(biped, rng):
    plant = sim.make_plant(biped)
    assert plant.true_model is biped
    q, qd = random_state(biped, rng)
    assert np.array_equal(tm.mass_matrix(plant.true_model, q),
                          tm.mass_matrix(biped, q))
    assert np.array_equal(tm.bias_forces(plant.true_model, q, qd),
                          tm.bias_forces(biped, q, qd))


def test_uniform_mass_scale_scales_mass_matrix(biped, rng):
    plant = sim.make_plant(biped, sim.MismatchSpec(mass_scale=1.2))
    q, _ = random_state(biped, rng)
    M_true = tm.mass_matrix(plant.true_model, q)
    M_nom = tm.mass_matrix(biped, q)
    assert np.max(np.abs(M_true - 1.2 * M_nom)) < 1e-12 * np.max(np.abs(M_nom))


def test_payload_adds_total_mass(biped):
    plant = sim.make_plant(biped, sim.MismatchSpec(payload_mass=5.0,
                                                   payload_link="torso"))
    assert plant.true_model.total_mass == pytest.approx(45.0)
    # CoM shifts toward the payload point
    spec = sim.MismatchSpec(payload_mass=5.0, payload_link="torso",
                            payload_point=(0.0, 0.5))
    shifted = sim.apply_mismatch(biped, spec)
    q = np.zeros(biped.nq)
    z0 = tm.com_state(biped, q, q).position[1]
    z1 = tm.com_state(shifted, q, q).position[1]
    assert z1 > z0


def test_invalid_mismatch_rejected(biped):
    with pytest.raises(ValueError, match="torso"):
        sim.make_plant(biped, sim.MismatchSpec(mass_scale={"torso": -1.0}))
    with pytest.raises(ValueError, match="viscous"):
        sim.make_plant(biped, sim.MismatchSpec(viscous_friction=-0.1))
    with pytest.raises(ValueError, match="payload_link"):
        sim.make_plant(biped, sim.MismatchSpec(payload_mass=1.0,
                                               payload_link="nowhere"))


# ---------------------------------------------------------------------------
# constrained accelerations

def test_free_fall_zero_gravity_zero_accel(biped, rng):
    plant = sim.make_plant(biped, sim.MismatchSpec(gravity_delta=-biped.gravity))
    q, _ = random_state(biped, rng)
    state = tm.PlantState(q=q, qdot=np.zeros(9), contacts=())
    qdd, lam = sim.constrained_accel(plant, state, np.zeros(6))
    assert np.max(np.abs(qdd)) < 1e-12
    assert lam.shape == (0,)


def test_standing_static_equilibrium(biped):
    plant = sim.make_plant(biped)
    state = standing(plant)
    tau, _ = oracles.static_equilibrium(biped, state.q)
    qdd, lam = sim.constrained_accel(plant, state, tau)
    assert np.max(np.abs(qdd)) < 1e-8
    forces = sim.normal_forces(plant, state, lam)
    total = sum(forces.values())
    assert total == pytest.approx(biped.total_mass * biped.gravity, abs=1e-6)
    assert min(forces.values()) > 0.0


def test_dynamics_residual_postcondition(biped, rng):
    # returned (qdd, lam) satisfy the dynamics and stabilized constraint rows
    plant = sim.make_plant(biped, sim.DEFAULT_MISMATCH)
    state = standing(plant)
    qd = rng.uniform(-0.1, 0.1, 9)
    state = tm.PlantState(q=state.q, qdot=qd, contacts=state.contacts,
                          anchors=state.anchors)
    tau = rng.uniform(-20.0, 20.0, 6)
    qdd, lam = sim.constrained_accel(plant, state, tau)
    true = plant.true_model
    M = tm.mass_matrix(true, state.q)
    h = tm.bias_forces(true, state.q, state.qdot)
    Jc, jdqd, pose = tm.contact_matrices(true, state.q, state.qdot)
    stau = np.zeros(9)
    stau[3:] = tau - plant.viscous * state.qdot[3:]
    r_dyn = M @ qdd + h - stau - Jc.T @ lam
    assert np.max(np.abs(r_dyn)) < 1e-8
    r_con = (Jc @ qdd + jdqd + 2 * plant.alpha * (Jc @ state.qdot)
             + plant.beta * (pose - state.anchors))
    assert np.max(np.abs(r_con)) < 1e-8


def test_pendulum_pivot_reaction_closed_form(pendulum):
    plant = sim.make_plant(pendulum)
    m_bob, i_bob = 1.0, 1.0e-06
    m_car = 0.5
    g, l = 9.81, 0.5
    for theta in (0.0, 0.5, -1.1):
        q = np.array([0.0, 0.0, 0.0, theta])
        state = sim.init_state(plant, q)
        qdd, lam = sim.constrained_accel(plant, state, np.zeros(1))
        thdd = -m_bob * g * l * np.sin(theta) / (m_bob * l * l + i_bob)
        a_com = thdd * np.array([l * np.cos(theta), l * np.sin(theta)])
        lam_expect = m_bob * a_com + np.array([0.0, (m_bob + m_car) * g])
        assert np.allclose(lam, lam_expect, atol=1e-9)
        assert qdd[3] + qdd[2] == pytest.approx(thdd, abs=1e-9)


def test_singular_kkt_reported(pendulum):
    # duplicating the same contact point yields linearly dependent rows
    from dataclasses import replace
    dup = replace(pendulum, contacts=(pendulum.contacts[0],
                                      replace(pendulum.contacts[0], name="pin2")))
    plant = sim.make_plant(dup)
    state = sim.init_state(plant, np.zeros(4))
    with pytest.raises(sim.SingularContactError, match="cond"):
        sim.constrained_accel(plant, state, np.zeros(1))


# ---------------------------------------------------------------------------
# integration

def test_zero_dynamics_state_unchanged(biped):
    plant = sim.make_plant(biped, sim.MismatchSpec(gravity_delta=-biped.gravity))
    q = np.linspace(-0.2, 0.2, 9)
    state = tm.PlantState(q=q, qdot=np.zeros(9), contacts=())
    nxt = sim.step(plant, state, np.zeros(6))
    assert np.array_equal(nxt.q, state.q)
    assert np.array_equal(nxt.qdot, state.qdot)
    assert nxt.time == pytest.approx(plant.dt)


def test_passive_pendulum_energy_drift(pendulum):
    plant = sim.make_plant(pendulum, dt=1e-4, substep_dt=1e-4)
    q = np.array([0.0, 0.0, 0.0, 0.8])
    state = sim.init_state(plant, q)
    true = plant.true_model

    def energy(s):
        return (tm.kinetic_energy(true, s.q, s.qdot)
                + tm.potential_energy(true, s.q))

    e0 = energy(state)
    e_ref = energy(sim.init_state(plant, np.zeros(4)))  # hanging at rest
    excursion = e0 - e_ref
    for _ in range(50_000):  # 5 s
        state = sim.step(plant, state, np.zeros(1))
    drift = abs(energy(state) - e0)
    assert drift < 1e-3 * abs(excursion)


def test_standing_biped_holds_height(biped):
    plant = sim.make_plant(biped)
    state = standing(plant)
    z0 = state.q[1]
    tau, _ = oracles.static_equilibrium(biped, state.q)
    for _ in range(2000):  # 2 s at dt = 1e-3
        state = sim.step(plant, state, tau)
    assert abs(state.q[1] - z0) < 1e-3
    assert sim.contact_drift(plant, state) < 1e-4


def test_contact_drift_long_episode(biped):
    # 10 s of standing under mismatch with a simple joint-space PD hold
    plant = sim.make_plant(biped, sim.DEFAULT_MISMATCH)
    state = standing(plant)
    q_ref = state.q.copy()
    tau0, _ = oracles.static_equilibrium(biped, state.q)
    for _ in range(10_000):
        tau = tau0 + 200.0 * (q_ref[3:] - state.q[3:]) - 20.0 * state.qdot[3:]
        tau = np.clip(tau, -150.0, 150.0)
        state = sim.step(plant, state, tau)
    assert sim.contact_drift(plant, state) < 1e-4


def test_nonfinite_tau_rejected(biped):
    plant = sim.make_plant(biped)
    state = standing(plant)
    with pytest.raises(ValueError, match="finite"):
        sim.constrained_accel(plant, state, np.full(6, np.nan))
