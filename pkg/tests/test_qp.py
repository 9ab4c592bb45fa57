"""Interior-point QP solver: hand-solved cases, certificates, properties."""

import numpy as np
import pytest

from taskilc import qp


def random_problem(rng, d=None, me=None, mi=None):
    """Random PSD objective with constraints feasible by construction."""
    d = d or int(rng.integers(2, 40))
    me = me if me is not None else int(rng.integers(0, max(1, d // 3) + 1))
    mi = mi if mi is not None else int(rng.integers(0, 2 * d + 1))
    B = rng.normal(size=(d, d))
    H = B @ B.T + 0.1 * np.eye(d)
    g = rng.normal(size=d)
    z_star = rng.normal(size=d)
    A_eq = rng.normal(size=(me, d))
    b_eq = A_eq @ z_star
    A_in = rng.normal(size=(mi, d))
    b_in = A_in @ z_star + rng.uniform(0.1, 2.0, size=mi)
    return qp.QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in), z_star


# ---------------------------------------------------------------------------
# hand-solved examples

def test_unconstrained_minimum():
    prob = qp.QpProblem(H=np.eye(2), g=np.array([-1.0, -2.0]))
    sol = qp.solve(prob)
    assert sol.status == qp.OPTIMAL
    assert np.allclose(sol.z, [1.0, 2.0], atol=1e-8)
    assert sol.objective == pytest.approx(-2.5, abs=1e-9)


def test_equality_projection():
    prob = qp.QpProblem(H=np.eye(2), g=np.array([-1.0, -2.0]),
                        A_eq=np.array([[1.0, 1.0]]), b_eq=np.array([0.0]))
    sol = qp.solve(prob)
    assert sol.status == qp.OPTIMAL
    assert np.allclose(sol.z, [-0.5, 0.5], atol=1e-8)


def test_active_bound_multiplier():
    prob = qp.QpProblem(H=np.array([[2.0]]), g=np.array([0.0]),
                        A_in=np.array([[-1.0]]), b_in=np.array([-1.0]))
    sol = qp.solve(prob)
    assert sol.status == qp.OPTIMAL
    assert sol.z[0] == pytest.approx(1.0, abs=1e-8)
    assert sol.u[0] == pytest.approx(2.0, abs=1e-6)


def test_inactive_inequality_fast_path():
    prob = qp.QpProblem(H=np.eye(2), g=np.array([-1.0, -2.0]),
                        A_in=np.array([[1.0, 0.0]]), b_in=np.array([10.0]))
    sol = qp.solve(prob)
    assert sol.status == qp.OPTIMAL
    assert sol.iterations == 0
    assert np.allclose(sol.z, [1.0, 2.0], atol=1e-8)


# ---------------------------------------------------------------------------
# kkt_residuals

def test_residuals_at_exact_solution():
    prob = qp.QpProblem(H=np.eye(2), g=np.array([-1.0, -2.0]))
    res = qp.kkt_residuals(prob, np.array([1.0, 2.0]))
    assert res.max() <= 1e-12


def test_residuals_linear_response():
    prob = qp.QpProblem(H=np.eye(2), g=np.array([-1.0, -2.0]))
    res = qp.kkt_residuals(prob, np.array([1.0 + 1e-3, 2.0]))
    assert res.stationarity == pytest.approx(1e-3, rel=1e-9)


def test_residuals_nonoptimal_point(rng):
    prob, z_star = random_problem(rng, d=6, me=2, mi=4)
    z_feas = z_star  # feasible by construction, not optimal in general
    res = qp.kkt_residuals(prob, z_feas)
    assert res.primal_eq <= 1e-9
    assert res.primal_in <= 1e-9
    assert res.stationarity > 0.0


def test_residuals_dimension_check():
    prob = qp.QpProblem(H=np.eye(2), g=np.zeros(2))
    with pytest.raises(ValueError):
        qp.kkt_residuals(prob, np.zeros(3))


# ---------------------------------------------------------------------------
# problem validation

def test_asymmetric_h_rejected():
    H = np.array([[1.0, 1e-3], [0.0, 1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        qp.QpProblem(H=H, g=np.zeros(2))


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="A_eq"):
        qp.QpProblem(H=np.eye(2), g=np.zeros(2),
                     A_eq=np.zeros((1, 3)), b_eq=np.zeros(1))


# ---------------------------------------------------------------------------
# solver properties

def test_probabilistic_optimality(rng):
    for _ in range(15):
        prob, z_star = random_problem(rng)
        sol = qp.solve(prob)
        assert sol.status == qp.OPTIMAL, sol.residuals
        # null-space samples around the strictly feasible z_star
        me = prob.A_eq.shape[0]
        d = prob.dim
        if me:
            _, _, vt = np.linalg.svd(prob.A_eq)
            N = vt[me:].T
        else:
            N = np.eye(d)
        for _ in range(100):
            step = N @ rng.normal(size=N.shape[1])
            zf = z_star + step
            for _ in range(40):
                if np.all(prob.A_in @ zf <= prob.b_in + 1e-12):
                    break
                zf = z_star + (zf - z_star) * 0.5
            obj = 0.5 * zf @ prob.H @ zf + prob.g @ zf
            assert sol.objective <= obj + 1e-7 * max(1.0, abs(obj))


def test_equality_only_matches_direct_kkt(rng):
    for _ in range(20):
        prob, _ = random_problem(rng, mi=0)
        sol = qp.solve(prob)
        d, me = prob.dim, prob.A_eq.shape[0]
        K = np.zeros((d + me, d + me))
        K[:d, :d] = prob.H
        K[:d, d:] = prob.A_eq.T
        K[d:, :d] = prob.A_eq
        direct = np.linalg.solve(K, np.concatenate([-prob.g, prob.b_eq]))
        assert np.max(np.abs(sol.z - direct[:d])) < 1e-8


def test_objective_scaling_invariance(rng):
    for c in (0.01, 7.3, 512.0):
        prob, _ = random_problem(rng, d=12, me=3, mi=20)
        scaled = qp.QpProblem(H=c * prob.H, g=c * prob.g,
                              A_eq=prob.A_eq, b_eq=prob.b_eq,
                              A_in=prob.A_in, b_in=prob.b_in)
        z1 = qp.solve(prob).z
        z2 = qp.solve(scaled).z
        assert np.max(np.abs(z1 - z2)) < 1e-8


def test_determinism(rng):
    prob, _ = random_problem(rng, d=10, me=2, mi=15)
    s1 = qp.solve(prob)
    s2 = qp.solve(prob)
    assert np.array_equal(s1.z, s2.z)
    assert s1.iterations == s2.iterations


def test_infeasible_detected():
    # x >= 1 and x <= -1
    prob = qp.QpProblem(H=np.array([[1.0]]), g=np.zeros(1),
                        A_in=np.array([[-1.0], [1.0]]),
                        b_in=np.array([-1.0, -1.0]))
    sol = qp.solve(prob)
    assert sol.status == qp.INFEASIBLE
    # certificate heuristic: the least-violating point sits between the bounds
    assert abs(sol.z[0]) <= 1.0 + 1e-6


def test_max_iterations_returns_best_iterate(rng):
    prob, _ = random_problem(rng, d=10, me=2, mi=15)
    sol = qp.solve(prob, qp.QpSettings(max_iter=1, polish=False))
    if sol.status == qp.MAX_ITERATIONS:
        assert np.all(np.isfinite(sol.z))
        assert sol.residuals.max() > 0.0


def test_residual_certificate_batch(rng):
    # acceptance-grade batch: 200 random problems, all four norms <= 1e-6
    for _ in range(200):
        prob, _ = random_problem(rng, d=int(rng.integers(2, 25)))
        sol = qp.solve(prob)
        assert sol.status == qp.OPTIMAL
        assert sol.residuals.max() <= 1e-6


def test_warm_start_keeps_certificate(rng):
    prob, _ = random_problem(rng, d=8, me=2, mi=12)
    cold = qp.solve(prob)
    warm = qp.solve(prob, warm=cold)
    assert warm.status == qp.OPTIMAL
    assert warm.residuals.max() <= 1e-6
    assert np.max(np.abs(warm.z - cold.z)) < 1e-7


# ---------------------------------------------------------------------------
# dump format

def test_dump_roundtrip(tmp_path, rng):
    prob, _ = random_problem(rng, d=5, me=2, mi=3)
    prob = qp.QpProblem(H=prob.H, g=prob.g, A_eq=prob.A_eq, b_eq=prob.b_eq,
                        A_in=prob.A_in, b_in=prob.b_in,
                        names=tuple(f"z{i}" for i in range(5)))
    path = tmp_path / "problem.txt"
    qp.dump_problem(prob, path)
    back = qp.load_problem(path)
    assert np.array_equal(back.H, prob.H)
    assert np.array_equal(back.g, prob.g)
    assert np.array_equal(back.A_eq, prob.A_eq)
    assert np.array_equal(back.b_in, prob.b_in)
    assert back.names == prob.names
