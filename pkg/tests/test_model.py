"""Model loading, kinematics and dynamics against independent oracles."""

import numpy as np
import pytest
import yaml

import taskilc
from taskilc import model as tm
from taskilc import oracles

from conftest import random_state


# ---------------------------------------------------------------------------
# loading and validation

def test_pendulum_counts(pendulum):
    assert pendulum.n == 1
    assert pendulum.nq == 4
    assert len(pendulum.links) == 2


def test_biped_counts(biped):
    assert biped.n == 6
    assert biped.nq == 9
    assert len(biped.links) == 7
    assert biped.total_mass == pytest.approx(40.0)
    assert [c.kind for c in biped.contacts] == [tm.FLAT, tm.FLAT]
    assert biped.contact_rows == 6


def test_zero_mass_rejected(tmp_path):
    doc = yaml.safe_load(open(taskilc.bundled_model_path("pendulum")))
    doc["links"][1]["mass_kg"] = 0.0
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(tm.ModelError, match="bob"):
        tm.load_model(path)


def test_disconnected_tree_rejected(tmp_path):
    doc = yaml.safe_load(open(taskilc.bundled_model_path("pendulum")))
    doc["links"].append({"name": "orphan", "mass_kg": 1.0,
                         "inertia_kgm2": 0.1, "com_m": [0.0, 0.0]})
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(tm.ModelError, match="orphan"):
        tm.load_model(path)


def test_missing_field_names_path(tmp_path):
    doc = yaml.safe_load(open(taskilc.bundled_model_path("pendulum")))
    del doc["links"][0]["inertia_kgm2"]
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(tm.ModelError, match=r"links\[0\]"):
        tm.load_model(path)


def test_load_deterministic_and_roundtrip(biped, tmp_path):
    again = tm.load_model(taskilc.bundled_model_path("biped"))
    assert again == biped
    out = tmp_path / "copy.yaml"
    tm.save_model(biped, out)
    assert tm.load_model(out) == biped


def test_plant_state_validation():
    with pytest.raises(ValueError):
        tm.PlantState(q=np.zeros(4), qdot=np.zeros(5))
    with pytest.raises(ValueError):
        tm.PlantState(q=np.array([np.nan, 0.0]), qdot=np.zeros(2))


# ---------------------------------------------------------------------------
# mass matrix

def test_pendulum_mass_matrix_closed_form(pendulum):
    # point mass m at distance l from the joint: joint-joint entry m l^2
    M = tm.mass_matrix(pendulum, np.zeros(4))
    bob = pendulum.links[1]
    assert M[3, 3] == pytest.approx(
        bob.mass * 0.5 ** 2 + bob.inertia, rel=1e-12)
    assert M[3, 3] == pytest.approx(0.25, rel=1e-4)


def test_mass_matrix_symmetric_pd(biped, rng):
    for _ in range(1000):
        q, _ = random_state(biped, rng)
        M = tm.mass_matrix(biped, q)
        assert np.max(np.abs(M - M.T)) < 1e-10
        assert np.linalg.eigvalsh(M).min() > 0.0


def test_mass_matrix_matches_inverse_dynamics_columns(biped, pendulum, rng):
    for model in (biped, pendulum):
        for _ in range(20):
            q, _ = random_state(model, rng)
            M = tm.mass_matrix(model, q)
            M_id = oracles.mass_matrix_from_inverse_dynamics(model, q)
            assert np.max(np.abs(M - M_id)) < 1e-8


def test_mass_matrix_matches_link_energy(biped, rng):
    for _ in range(20):
        q, qd = random_state(biped, rng)
        T_links = tm.kinetic_energy(biped, q, qd)
        T_quad = oracles.kinetic_energy_quadratic_form(biped, q, qd)
        assert T_quad == pytest.approx(T_links, rel=1e-10, abs=1e-12)


def test_mass_matrix_independent_of_qdot(biped, rng):
    q, _ = random_state(biped, rng)
    assert np.array_equal(tm.mass_matrix(biped, q), tm.mass_matrix(biped, q))


def test_mass_matrix_rejects_bad_length(biped):
    with pytest.raises(ValueError, match="length 9"):
        tm.mass_matrix(biped, np.zeros(4))


# ---------------------------------------------------------------------------
# bias forces

def test_pendulum_gravity_torque(pendulum):
    theta = 0.7
    q = np.array([0.0, 0.0, 0.0, theta])
    h = tm.bias_forces(pendulum, q, np.zeros(4))
    assert h[3] == pytest.approx(1.0 * 9.81 * 0.5 * np.sin(theta), rel=1e-12)


def test_bias_matches_lagrangian_fd(biped, rng):
    for _ in range(5):
        q, qd = random_state(biped, rng)
        h = tm.bias_forces(biped, q, qd)
        h_fd = oracles.fd_bias_forces(biped, q, qd)
        assert np.max(np.abs(h - h_fd)) < 1e-5 * max(1.0, np.max(np.abs(h)))


def test_bias_at_rest_is_potential_gradient(biped, rng):
    for _ in range(5):
        q, _ = random_state(biped, rng)
        h = tm.bias_forces(biped, q, np.zeros(biped.nq))
        g = oracles.fd_potential_gradient(biped, q)
        assert np.max(np.abs(h - g)) < 1e-5


def test_bias_zero_gravity_at_rest(biped, rng):
    from dataclasses import replace
    zero_g = replace(biped, gravity=0.0)
    q, _ = random_state(biped, rng)
    h = tm.bias_forces(zero_g, q, np.zeros(biped.nq))
    assert np.max(np.abs(h)) < 1e-12


# ---------------------------------------------------------------------------
# Jacobians

def test_base_translation_block_identity(biped, rng):
    q, _ = random_state(biped, rng)
    J = tm.point_jacobian(biped, q, "l_foot", (0.1, -0.05))
    assert np.allclose(J[:, :2], np.eye(2))


def test_point_jacobian_matches_fd(biped, rng):
    for body in ("torso", "l_shank", "r_foot"):
        q, _ = random_state(biped, rng)
        J = tm.point_jacobian(biped, q, body, (0.05, -0.02))
        J_fd = oracles.fd_point_jacobian(biped, q, body, (0.05, -0.02))
        assert np.max(np.abs(J - J_fd)) < 1e-6


def test_point_on_joint_axis_zero_column(biped, rng):
    # the l_ankle joint sits at (0, -0.4) in l_shank; a point there on the
    # foot is unaffected by the ankle angle
    q, _ = random_state(biped, rng)
    J = tm.point_jacobian(biped, q, "l_foot", (0.0, 0.0))
    col = 3 + 2  # l_ankle coordinate
    assert np.max(np.abs(J[:, col])) < 1e-12


def test_jacobian_velocity_consistency(biped, rng):
    q, qd = random_state(biped, rng)
    v = tm.point_velocity(biped, q, qd, "r_shank", (0.0, -0.3))
    eps = 1e-7
    p0 = tm.point_position(biped, q - eps * qd, "r_shank", (0.0, -0.3))
    p1 = tm.point_position(biped, q + eps * qd, "r_shank", (0.0, -0.3))
    assert np.max(np.abs(v - (p1 - p0) / (2 * eps))) < 1e-6


def test_unknown_body_raises(biped):
    with pytest.raises(KeyError, match="missing_link"):
        tm.point_jacobian(biped, np.zeros(9), "missing_link")


def test_jdot_qdot_zero_velocity(biped, rng):
    q, _ = random_state(biped, rng)
    out = tm.jacobian_dot_times_qdot(biped, q, np.zeros(9), "l_foot")
    assert np.max(np.abs(out)) == 0.0


def test_jdot_qdot_pure_base_translation(biped, rng):
    q, _ = random_state(biped, rng)
    qd = np.zeros(9)
    qd[0] = 0.7
    qd[1] = -0.3
    out = tm.jacobian_dot_times_qdot(biped, q, qd, "r_foot", (0.1, 0.0))
    assert np.max(np.abs(out)) < 1e-12


def test_jdot_qdot_matches_fd(biped, rng):
    for _ in range(5):
        q, qd = random_state(biped, rng)
        out = tm.jacobian_dot_times_qdot(biped, q, qd, "l_foot", (0.05, -0.05))
        fd = oracles.fd_jacobian_dot_times_qdot(biped, q, qd, "l_foot", (0.05, -0.05))
        assert np.max(np.abs(out - fd)) < 1e-5 * max(1.0, np.max(np.abs(out)))


def test_flat_jacobian_pitch_row(biped, rng):
    q, _ = random_state(biped, rng)
    J = tm.point_jacobian(biped, q, "l_foot", (0.0, -0.05), with_pitch=True)
    # pitch of the foot depends 1:1 on base pitch and each left-leg joint
    expect = np.zeros(9)
    expect[2] = expect[3] = expect[4] = expect[5] = 1.0
    assert np.allclose(J[2], expect)


# ---------------------------------------------------------------------------
# center of mass

def test_single_link_com_is_link_com(pendulum, rng):
    q, qd = random_state(pendulum, rng)
    st = tm.com_state(pendulum, q, qd)
    links = tm.link_com_states(pendulum, q, qd)
    masses = [l.mass for l in pendulum.links]
    expect = sum(m * l.com_position for m, l in zip(masses, links)) / sum(masses)
    assert np.allclose(st.position, expect)


def test_zero_posture_com_closed_form(biped):
    # legs straight down at the origin: hand-summed mass-weighted link CoMs
    st = tm.com_state(biped, np.zeros(9), np.zeros(9))
    com_x = 2 * 1.0 * 0.04 / 40.0
    com_z = (20 * 0.25 + 2 * 5 * -0.20 + 2 * 4 * -0.60 + 2 * 1 * -0.83) / 40.0
    assert st.position[0] == pytest.approx(com_x, abs=1e-12)
    assert st.position[1] == pytest.approx(com_z, abs=1e-12)


def test_com_velocity_is_jacobian_times_qdot(biped, rng):
    q, qd = random_state(biped, rng)
    st = tm.com_state(biped, q, qd)
    assert np.allclose(st.velocity, st.jacobian @ qd, atol=1e-12)


def test_com_jacobian_matches_fd(biped, rng):
    for _ in range(5):
        q, _ = random_state(biped, rng)
        st = tm.com_state(biped, q, np.zeros(9))
        J_fd = oracles.fd_com_jacobian(biped, q)
        assert np.max(np.abs(st.jacobian - J_fd)) < 1e-6
