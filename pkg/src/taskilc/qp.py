"""Dense convex QP solver for controller-shaped problems.

    minimize   0.5 z^T H z + g^T z
    subject to A_eq z = b_eq
               A_in z <= b_in

The algorithm is a Mehrotra predictor-corrector primal-dual interior
point method with two practical additions:

* an equality-restricted fast path: the problem is first solved ignoring
  inequalities; if that point is inequality-feasible it is optimal with
  zero inequality multipliers (the common case for the controller, whose
  limits are rarely active), and no interior-point iterations run at all;
* a polish step: after the interior-point loop, the active set is frozen
  and the resulting equality KKT system is re-solved by least squares
  with one round of iterative refinement, pushing residuals to machine
  precision.

The contract is the certificate, not the method: ``status == "optimal"``
means all four KKT residual norms are at or below ``QpSettings.tol``.
Solves are deterministic and reentrant; warm starting only seeds the
iteration and never weakens certification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
MAX_ITERATIONS = "max-iterations"
INFEASIBLE = "infeasible"


class KktResiduals(NamedTuple):
    """Infinity norms of the four KKT conditions."""

    stationarity: float
    primal_eq: float
    primal_in: float
    complementarity: float

    def max(self) -> float:
        return max(self)


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    names: tuple[str, ...] | None = None  # per-variable labels for diagnostics

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        g = np.asarray(self.g, dtype=float)
        d = g.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"H must be {d}x{d}, got {H.shape}")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10:
            raise ValueError("H must be symmetric within 1e-10")
        A_eq = np.zeros((0, d)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float)
        A_in = np.zeros((0, d)) if self.A_in is None else np.asarray(self.A_in, dtype=float)
        b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, dtype=float)
        if A_eq.shape != (b_eq.shape[0], d):
            raise ValueError(f"A_eq/b_eq dimensions inconsistent: {A_eq.shape}, {b_eq.shape}")
        if A_in.shape != (b_in.shape[0], d):
            raise ValueError(f"A_in/b_in dimensions inconsistent: {A_in.shape}, {b_in.shape}")
        if self.names is not None and len(self.names) != d:
            raise ValueError("names must have one entry per variable")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_in", b_in)

    @property
    def dim(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True)
class QpSettings:
    tol: float = 1e-6         # certification tolerance on KKT residuals
    rel_tol: float = 1e-10    # scaled iteration target for the IP loop
    max_iter: int = 60
    reg: float = 1e-9         # added to diag(H) before factorization
    polish: bool = True


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    y: np.ndarray             # equality multipliers
    u: np.ndarray             # inequality multipliers (>= 0)
    objective: float
    status: str
    iterations: int
    residuals: KktResiduals


def kkt_residuals(problem: QpProblem, z, y=None, u=None) -> KktResiduals:
    """Residual norms of a candidate point; zero at an exact KKT point.

    complementarity covers both u_i s_i products and dual feasibility
    (negative multipliers are reported here).
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (problem.dim,):
        raise ValueError(f"z must have length {problem.dim}")
    y = np.zeros(problem.A_eq.shape[0]) if y is None else np.asarray(y, dtype=float)
    u = np.zeros(problem.A_in.shape[0]) if u is None else np.asarray(u, dtype=float)
    if y.shape != (problem.A_eq.shape[0],) or u.shape != (problem.A_in.shape[0],):
        raise ValueError("multiplier dimensions do not match the problem")
    r_stat = problem.H @ z + problem.g
    if y.size:
        r_stat = r_stat + problem.A_eq.T @ y
    if u.size:
        r_stat = r_stat + problem.A_in.T @ u
    stat = float(np.max(np.abs(r_stat), initial=0.0))
    peq = float(np.max(np.abs(problem.A_eq @ z - problem.b_eq), initial=0.0))
    s = problem.b_in - problem.A_in @ z
    pin = float(np.max(-s, initial=0.0))
    pin = max(pin, 0.0)
    comp = float(np.max(np.abs(u * s), initial=0.0))
    comp = max(comp, float(np.max(-u, initial=0.0)))
    return KktResiduals(stat, peq, pin, comp)


def _objective(problem: QpProblem, z: np.ndarray) -> float:
    return float(0.5 * z @ problem.H @ z + problem.g @ z)


def _solve_refined(K_fact: np.ndarray, K_true: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve K_true x = rhs using K_fact (regularized) as the factorization.

    Iterative refinement against K_true removes the regularization bias;
    each pass is kept only if it reduces the residual, so a genuinely
    singular K_true degrades gracefully to the regularized solution.
    """
    try:
        lu = scipy.linalg.lu_factor(K_fact)
        x = scipy.linalg.lu_solve(lu, rhs)
        resid = float(np.max(np.abs(rhs - K_true @ x), initial=0.0))
        for _ in range(3):
            r = rhs - K_true @ x
            x_new = x + scipy.linalg.lu_solve(lu, r)
            resid_new = float(np.max(np.abs(rhs - K_true @ x_new), initial=0.0))
            if not np.isfinite(resid_new) or resid_new >= resid:
                break
            x, resid = x_new, resid_new
        return x
    except (np.linalg.LinAlgError, ValueError):
        x = np.linalg.lstsq(K_true, rhs, rcond=None)[0]
        return x + np.linalg.lstsq(K_true, rhs - K_true @ x, rcond=None)[0]


def _kkt_matrix(H, A, C=None):
    d = H.shape[0]
    me = A.shape[0]
    ma = 0 if C is None else C.shape[0]
    K = np.zeros((d + me + ma, d + me + ma))
    K[:d, :d] = H
    if me:
        K[:d, d:d + me] = A.T
        K[d:d + me, :d] = A
    if ma:
        K[:d, d + me:] = C.T
        K[d + me:, :d] = C
    return K


def _equality_solve(H_reg, H, g, A, b):
    """(z, y) of the equality-constrained problem."""
    d = g.shape[0]
    rhs = np.concatenate([-g, b])
    x = _solve_refined(_kkt_matrix(H_reg, A), _kkt_matrix(H, A), rhs)
    return x[:d], x[d:]


def _polish(problem: QpProblem, H_reg, z, y, u, tol):
    """Re-solve with the apparent active set frozen; keep only if better."""
    s = problem.b_in - problem.A_in @ z
    act = np.flatnonzero(u > s)
    C = problem.A_in[act]
    d = problem.dim
    me = problem.A_eq.shape[0]
    K_reg = _kkt_matrix(H_reg, problem.A_eq, C)
    K_true = _kkt_matrix(problem.H, problem.A_eq, C)
    rhs = np.concatenate([-problem.g, problem.b_eq, problem.b_in[act]])
    x = _solve_refined(K_reg, K_true, rhs)
    zp = x[:d]
    yp = x[d:d + me]
    up = np.zeros(problem.A_in.shape[0])
    up[act] = x[d + me:]
    if np.any(up < -tol):
        return None
    res = kkt_residuals(problem, zp, yp, up)
    return zp, yp, up, res


def solve(problem: QpProblem, settings: QpSettings | None = None,
          warm: QpSolution | None = None) -> QpSolution:
    """Solve the QP; see the module docstring for the contract."""
    st = settings or QpSettings()
    d = problem.dim
    H = problem.H + st.reg * np.eye(d)
    g = problem.g
    A, b = problem.A_eq, problem.b_eq
    C, dd = problem.A_in, problem.b_in
    mi = C.shape[0]

    def finish(z, y, u, iters, status):
        res = kkt_residuals(problem, z, y, u)
        if status != INFEASIBLE:
            status = OPTIMAL if res.max() <= st.tol else MAX_ITERATIONS
        return QpSolution(z=z, y=y, u=u, objective=_objective(problem, z),
                          status=status, iterations=iters, residuals=res)

    # fast path: ignore inequalities; optimal if the result is feasible
    z0, y0 = _equality_solve(H, problem.H, g, A, b)
    if mi == 0:
        return finish(z0, y0, np.zeros(0), 0, OPTIMAL)
    if np.all(C @ z0 - dd <= st.tol * 1e-3):
        sol = finish(z0, y0, np.zeros(mi), 0, OPTIMAL)
        if sol.status == OPTIMAL:
            return sol

    # interior point on the full problem
    me = A.shape[0]
    scale = max(1.0, float(np.max(np.abs(g))), float(np.max(np.abs(dd), initial=0.0)),
                float(np.max(np.abs(b), initial=0.0)))
    z = warm.z.copy() if warm is not None and warm.z.shape == (d,) else z0
    y = np.zeros(me)
    sl = dd - C @ z
    sl = np.where(sl > 1.0, sl, 1.0)
    u = np.ones(mi)

    best = None        # lowest max-residual iterate
    best_viol = None   # lowest constraint violation (infeasibility certificate)
    status = MAX_ITERATIONS
    iters = 0
    for it in range(1, st.max_iter + 1):
        iters = it
        r_stat = H @ z + g + A.T @ y + C.T @ u
        r_eq = A @ z - b
        r_in = C @ z + sl - dd
        mu = float(sl @ u) / mi

        res = kkt_residuals(problem, z, y, u)
        viol = max(res.primal_eq, res.primal_in)
        if best is None or res.max() < best[4]:
            best = (z.copy(), y.copy(), u.copy(), it, res.max())
        if best_viol is None or viol < best_viol[4]:
            best_viol = (z.copy(), y.copy(), u.copy(), it, viol)
        if res.max() <= st.tol or (max(np.max(np.abs(r_stat)), np.max(np.abs(r_eq), initial=0.0),
                                       np.max(np.abs(r_in)), mu) <= st.rel_tol * scale):
            status = OPTIMAL
            break
        # dual blow-up with stalled primal violation: declare infeasible and
        # return the least-violating point as the certificate heuristic
        if it > 8 and viol > max(st.tol, 1e-9 * scale) and \
                max(np.max(np.abs(u)), np.max(np.abs(y), initial=0.0)) > 1e10 * scale:
            z, y, u, iters, _ = best_viol
            return finish(z, y, u, iters, INFEASIBLE)

        D = u / sl
        K = np.zeros((d + me, d + me))
        K[:d, :d] = H + (C.T * D) @ C
        if me:
            K[:d, d:] = A.T
            K[d:, :d] = A
        try:
            lu = _lu_factor(K)
        except (np.linalg.LinAlgError, ValueError):
            break

        def direction(rsu):
            # eliminate (ds, du): ds = -r_in - C dz, du = -(rsu + u ds)/sl,
            # leaving (H + C^T D C) dz + A^T dy = -r_stat + C^T((rsu - u r_in)/sl)
            rhs = np.concatenate([-r_stat + C.T @ ((rsu - u * r_in) / sl), -r_eq])
            x = _lu_solve(lu, rhs)
            dz = x[:d]
            dy = x[d:]
            ds = -r_in - C @ dz
            du = -(rsu + u * ds) / sl
            return dz, dy, ds, du

        # affine (predictor) step
        dz_a, dy_a, ds_a, du_a = direction(sl * u)
        alpha_pa = _max_step(sl, ds_a)
        alpha_da = _max_step(u, du_a)
        mu_aff = float((sl + alpha_pa * ds_a) @ (u + alpha_da * du_a)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector step
        rsu = sl * u + ds_a * du_a - sigma * mu
        dz, dy, ds, du = direction(rsu)
        alpha_p = 0.995 * _max_step(sl, ds)
        alpha_d = 0.995 * _max_step(u, du)
        z = z + alpha_p * dz
        sl = sl + alpha_p * ds
        y = y + alpha_d * dy
        u = u + alpha_d * du

    else:
        z, y, u, iters, _ = best

    if st.polish:
        polished = _polish(problem, H, z, y, u, st.tol)
        if polished is not None and polished[3].max() <= kkt_residuals(problem, z, y, u).max():
            z, y, u, _ = polished
    return finish(z, y, u, iters, status)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _lu_factor(K):
    return scipy.linalg.lu_factor(K)


def _lu_solve(lu, rhs):
    return scipy.linalg.lu_solve(lu, rhs)


# ---------------------------------------------------------------------------
# offline debugging dump

def dump_problem(problem: QpProblem, path) -> None:
    """Write the problem to a plain-text format.

    Layout: a header line ``taskilc-qp 1``, then ``dim/eq/in`` counts,
    optional ``names`` line, then the matrices H, g, A_eq, b_eq, A_in,
    b_in as whitespace-separated rows with full float precision.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("taskilc-qp 1\n")
        fh.write(f"dim {problem.dim} eq {problem.A_eq.shape[0]} in {problem.A_in.shape[0]}\n")
        if problem.names:
            fh.write("names " + " ".join(problem.names) + "\n")
        for tag, arr in (("H", problem.H), ("g", problem.g),
                         ("A_eq", problem.A_eq), ("b_eq", problem.b_eq),
                         ("A_in", problem.A_in), ("b_in", problem.b_in)):
            fh.write(f"{tag}\n")
            rows = np.atleast_2d(arr)
            for row in rows:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_problem(path) -> QpProblem:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [l.rstrip("\n") for l in fh]
    if not lines or lines[0] != "taskilc-qp 1":
        raise ValueError(f"{path}: not a taskilc qp dump")
    head = lines[1].split()
    d, me, mi = int(head[1]), int(head[3]), int(head[5])
    i = 2
    names = None
    if i < len(lines) and lines[i].startswith("names "):
        names = tuple(lines[i].split()[1:])
        i += 1
    blocks = {}
    expect = {"H": d, "g": 1, "A_eq": me, "b_eq": 1 if me else 0,
              "A_in": mi, "b_in": 1 if mi else 0}
    while i < len(lines):
        tag = lines[i]
        i += 1
        nrows = expect[tag]
        rows = [np.array([float(v) for v in lines[i + k].split()])
                for k in range(nrows)]
        i += nrows
        blocks[tag] = np.array(rows) if rows else np.zeros((0, d))
    g = blocks["g"][0]
    return QpProblem(
        H=blocks["H"], g=g,
        A_eq=blocks["A_eq"].reshape(me, d), b_eq=blocks.get("b_eq", np.zeros((0,))).reshape(-1)[:me],
        A_in=blocks["A_in"].reshape(mi, d), b_in=blocks.get("b_in", np.zeros((0,))).reshape(-1)[:mi],
        names=names)
