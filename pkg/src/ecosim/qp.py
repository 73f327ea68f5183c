"""Dense convex QP solver.

Solves::

    minimize    0.5 z'Pz + q'z
    subject to  lb <= Az <= ub

with an operator-splitting (ADMM) iteration in the style of OSQP: Ruiz
equilibration, over-relaxation, per-row step sizes with adaptive scaling,
infeasibility certificates from successive dual iterates, and an active-set
polishing step that lifts converged iterates to high accuracy.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

INF = np.inf


class Status(enum.Enum):
    SOLVED = "solved"
    MAX_ITER = "max_iter"
    PRIMAL_INFEASIBLE = "primal_infeasible"


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        m = self.A.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.lb.size != m or self.ub.size != m:
            raise ValueError("bound vectors must match the number of constraint rows")
        if np.max(np.abs(self.P - self.P.T), initial=0.0) >= 1e-10:
            raise ValueError("P must be symmetric")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    status: Status
    prim_res: float
    dual_res: float
    iterations: int
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED


@dataclass(frozen=True)
class QpSettings:
    tol_prim: float = 1e-6
    tol_dual: float = 1e-6
    max_iter: int = 20000
    alpha: float = 1.6
    rho: float = 0.1
    sigma: float = 1e-6
    eq_scale: float = 1e3
    adaptive_every: int = 25
    adaptive_tol: float = 5.0
    check_every: int = 10
    polish_tol: float = 1e-3  # scaled-residual level at which polishing is attempted
    eps_pinf: float = 1e-5
    scaling_iter: int = 10


def _residuals(p: QpProblem, z: np.ndarray, y: np.ndarray):
    Az = p.A @ z
    prim = float(np.max(np.abs(Az - np.clip(Az, p.lb, p.ub)), initial=0.0))
    dual = float(np.max(np.abs(p.P @ z + p.q + p.A.T @ y), initial=0.0))
    return prim, dual


def _ruiz(P, A, iters: int):
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), A.copy()
    for _ in range(iters):
        col = np.maximum(np.max(np.abs(Ps), axis=0, initial=0.0),
                         np.max(np.abs(As), axis=0, initial=0.0))
        row = np.max(np.abs(As), axis=1, initial=0.0)
        d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        e = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
        Ps = d[:, None] * Ps * d[None, :]
        As = e[:, None] * As * d[None, :]
        D *= d
        E *= e
    return D, E


def _polish(p: QpProblem, z, y, Az, delta: float = 1e-9, refine: int = 5):
    """Solve the equality-constrained QP on the guessed active set."""
    lower = Az - p.lb < -y
    upper = p.ub - Az < y
    lower &= np.isfinite(p.lb)
    upper &= np.isfinite(p.ub)
    act = lower | upper
    A_act = p.A[act]
    rhs_b = np.where(lower, p.lb, p.ub)[act]
    n, k = p.n, A_act.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = p.P
    K[:n, n:] = A_act.T
    K[n:, :n] = A_act
    Kreg = K.copy()
    Kreg[:n, :n] += delta * np.eye(n)
    Kreg[n:, n:] -= delta * np.eye(k)
    rhs = np.concatenate([-p.q, rhs_b])
    try:
        lu = sla.lu_factor(Kreg, check_finite=False)
    except (ValueError, sla.LinAlgError):
        return None
    sol = sla.lu_solve(lu, rhs)
    for _ in range(refine):
        sol = sol + sla.lu_solve(lu, rhs - K @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    zp = sol[:n]
    yp = np.zeros(p.m)
    yp[act] = sol[n:]
    # active-set guess must be dual feasible
    yp[lower & (yp > 0)] = 0.0
    yp[upper & (yp < 0)] = 0.0
    return zp, yp


def solve(problem: QpProblem, settings: Optional[QpSettings] = None, **kw) -> QpSolution:
    """Solve ``problem``; keyword overrides (tol_prim, tol_dual, max_iter, ...)
    are applied on top of ``settings``."""
    st = settings or QpSettings()
    if kw:
        st = QpSettings(**{**st.__dict__, **kw})
    p = problem
    n, m = p.n, p.m
    if m == 0:
        z = np.linalg.solve(p.P + 1e-12 * np.eye(n), -p.q)
        prim, dual = _residuals(p, z, np.zeros(0))
        return QpSolution(z, np.zeros(0), Status.SOLVED, prim, dual, 0)

    # scaled data: x = D^-1 z, Ax-rows scaled by E, cost scaled by c
    D, E = _ruiz(p.P, p.A, st.scaling_iter)
    Ps = D[:, None] * p.P * D[None, :]
    qs = D * p.q
    c = 1.0 / max(np.mean(np.max(np.abs(Ps), axis=0, initial=0.0)), np.max(np.abs(qs), initial=0.0), 1e-4)
    c = min(c, 1e4)
    Ps *= c
    qs *= c
    As = E[:, None] * p.A * D[None, :]
    ls = E * p.lb
    us = E * p.ub

    eq = np.isclose(ls, us)
    free = ~np.isfinite(ls) & ~np.isfinite(us)
    rho = st.rho

    def rho_vec(r):
        v = np.full(m, r)
        v[eq] = r * st.eq_scale
        v[free] = 1e-6
        return v

    def factor(rv):
        K = Ps + st.sigma * np.eye(n) + As.T @ (rv[:, None] * As)
        return sla.cho_factor(K, check_finite=False)

    rv = rho_vec(rho)
    chol = factor(rv)
    x = np.zeros(n)
    zc = np.clip(np.zeros(m), ls, us)
    y = np.zeros(m)
    alpha = st.alpha

    def unscale(x, y):
        return D * x, E * y / c

    status = Status.MAX_ITER
    it = 0
    z_out, y_out = D * x, E * y / c
    for it in range(1, st.max_iter + 1):
        y_prev = y
        rhs = st.sigma * x - qs + As.T @ (rv * zc - y)
        xt = sla.cho_solve(chol, rhs, check_finite=False)
        zt = As @ xt
        x = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * zc
        z_new = np.clip(zr + y / rv, ls, us)
        y = y + rv * (zr - z_new)
        zc = z_new

        if it % st.check_every and it != st.max_iter:
            continue

        # scaled residuals drive adaptivity and the polishing trigger
        Ax = As @ x
        Px = Ps @ x
        Aty = As.T @ y
        rp = np.max(np.abs(Ax - zc), initial=0.0)
        rd = np.max(np.abs(Px + qs + Aty), initial=0.0)
        np_ = max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(zc), initial=0.0), 1e-12)
        nd_ = max(np.max(np.abs(Px), initial=0.0), np.max(np.abs(Aty), initial=0.0),
                  np.max(np.abs(qs), initial=0.0), 1e-12)

        z_out, y_out = unscale(x, y)
        prim, dual = _residuals(p, z_out, y_out)
        if prim <= st.tol_prim and dual <= st.tol_dual:
            status = Status.SOLVED
            break

        if rp / np_ <= st.polish_tol and rd / nd_ <= st.polish_tol:
            pol = _polish(p, z_out, y_out, p.A @ z_out)
            if pol is not None:
                zp, yp = pol
                pp, pd = _residuals(p, zp, yp)
                if pp <= st.tol_prim and pd <= st.tol_dual:
                    return QpSolution(zp, yp, Status.SOLVED, pp, pd, it, polished=True)

        # primal infeasibility certificate
        dy = y - y_prev
        dyn = np.max(np.abs(E * dy), initial=0.0)
        if dyn > 1e-12:
            atdy = np.max(np.abs(D * (As.T @ dy)), initial=0.0)
            up = np.where(dy > 0, us, 0.0)
            lo = np.where(dy < 0, ls, 0.0)
            if np.all(np.isfinite(up)) and np.all(np.isfinite(lo)):
                support = float(up @ np.maximum(dy, 0.0) + lo @ np.minimum(dy, 0.0))
                if atdy <= st.eps_pinf * dyn and support <= -st.eps_pinf * np.max(np.abs(dy)):
                    status = Status.PRIMAL_INFEASIBLE
                    break

        if it % st.adaptive_every == 0:
            ratio = np.sqrt((rp / np_) / max(rd / nd_, 1e-30))
            new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
            if new_rho > rho * st.adaptive_tol or new_rho < rho / st.adaptive_tol:
                rho = new_rho
                rv = rho_vec(rho)
                chol = factor(rv)

    prim, dual = _residuals(p, z_out, y_out)
    return QpSolution(z_out, y_out, status, prim, dual, it)


# ---------------------------------------------------------------------------
# Plain-text dump format
#
#   # ecosim-qp v1
#   n m
#   P      (n lines of n numbers)
#   q      (1 line of n numbers)
#   A      (m lines of n numbers)
#   lb     (1 line of m numbers; -inf allowed)
#   ub     (1 line of m numbers; inf allowed)
#
# Each block is preceded by a line holding its name. Numbers use repr-exact
# '%.17g' formatting.

def _fmt(row) -> str:
    return " ".join("%.17g" % v for v in row)


def dump_problem(problem: QpProblem, path) -> None:
    lines = ["# ecosim-qp v1", f"{problem.n} {problem.m}", "P"]
    lines += [_fmt(r) for r in problem.P]
    lines += ["q", _fmt(problem.q), "A"]
    lines += [_fmt(r) for r in problem.A]
    lines += ["lb", _fmt(problem.lb), "ub", _fmt(problem.ub)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_problem(path) -> QpProblem:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    n, m = (int(t) for t in lines[0].split())
    pos = 1

    def block(name, rows, cols):
        nonlocal pos
        if lines[pos].strip() != name:
            raise ValueError(f"expected block {name!r}, found {lines[pos]!r}")
        pos += 1
        vals = []
        for _ in range(rows):
            vals.append([float(t) for t in lines[pos].split()])
            pos += 1
        return np.array(vals, dtype=float).reshape(rows, cols)

    P = block("P", n, n)
    q = block("q", 1, n).ravel()
    A = block("A", m, n)
    lb = block("lb", 1, m).ravel()
    ub = block("ub", 1, m).ravel()
    return QpProblem(P, q, A, lb, ub)


# ---------------------------------------------------------------------------
# Condensed longitudinal MPC

@dataclass
class HorizonData:
    """Everything needed to condense the eco-driving MPC into a QP.

    ``scenarios`` holds ``(s_pred, prob, enforce)`` triples: predicted preceding
    positions for k = 1..N, the scenario weight in the expected cost, and
    whether its safety rows are imposed.
    """

    s0: float
    v0: float
    fixed_accels: np.ndarray
    scenarios: list
    dt: float = 0.1
    horizon: int = 50
    q_g: float = 1.0
    q_a: float = 960.0
    tau: float = 1.67
    d: float = 5.0
    tau_min: float = 0.67
    d_min: float = 3.0
    margin: Optional[np.ndarray] = None
    v_max: float = 30.0
    u_min: float = -6.0
    u_max: float = 3.0
    m1: float = -0.06
    b1: float = 4.2
    m2: float = -0.12
    b2: float = 6.0
    veh_length: float = 5.0
    slack_penalty: Optional[float] = None  # L1 slack on safety rows when set


def propagation_matrices(n_steps: int, dt: float):
    """Maps from accelerations a_0..a_{n-1} to s(k) - s0 - k dt v0 and
    v(k) - v0 for k = 0..n (row k)."""
    S = np.zeros((n_steps + 1, n_steps))
    V = np.zeros((n_steps + 1, n_steps))
    for k in range(1, n_steps + 1):
        j = np.arange(k)
        V[k, :k] = dt
        S[k, :k] = dt * dt * (k - j - 0.5)
    return S, V


@dataclass
class CondensedMpc:
    problem: QpProblem
    n_accel: int  # free accelerations; slack variables, if any, follow
    n_safety: int  # safety rows (one slack each when slack is enabled)

    def states(self, data: HorizonData, z: np.ndarray):
        """Planned (s, v) for k = 0..N + q from the decision vector."""
        return plan_states(data, z[: self.n_accel])


def plan_states(data: HorizonData, free_accels: np.ndarray):
    a_all = np.concatenate([np.asarray(data.fixed_accels, float), free_accels])
    n = len(a_all)
    S, V = propagation_matrices(n, data.dt)
    k = np.arange(n + 1)
    s = data.s0 + k * data.dt * data.v0 + S @ a_all
    v = data.v0 + V @ a_all
    return s, v


def condense_mpc(data: HorizonData) -> CondensedMpc:
    N = data.horizon
    fixed = np.asarray(data.fixed_accels, dtype=float)
    q = fixed.size
    T = N + q
    S, V = propagation_matrices(T, data.dt)
    Sf, Sz = S[:, :q], S[:, q:]
    Vf, Vz = V[:, :q], V[:, q:]
    kk = np.arange(T + 1)
    s_const = data.s0 + kk * data.dt * data.v0 + Sf @ fixed
    v_const = data.v0 + Vf @ fixed
    margin = np.zeros(N) if data.margin is None else np.asarray(data.margin, float)

    for s_pred, _, _ in data.scenarios:
        if len(s_pred) < N:
            raise ValueError(f"prediction has {len(s_pred)} steps, horizon needs {N}")
    total = sum(p for _, p, _ in data.scenarios)
    if total <= 0:
        raise ValueError("scenario probabilities must be positive")

    P = 2.0 * data.q_a * np.eye(N)
    qv = np.zeros(N)
    G = Sz[1:N + 1] + data.tau * Vz[1:N + 1]
    for s_pred, prob, _ in data.scenarios:
        w = prob / total
        b = (np.asarray(s_pred[:N], float) - data.veh_length - data.d
             - s_const[1:N + 1] - data.tau * v_const[1:N + 1])
        P += 2.0 * w * data.q_g * (G.T @ G)
        qv += -2.0 * w * data.q_g * (G.T @ b)

    rows, lo, hi = [], [], []
    eye = np.eye(N)
    rows.append(eye)
    lo.append(np.full(N, data.u_min))
    hi.append(np.full(N, data.u_max))
    # power-limit lines act on a(j+q) against v(j+q)
    for m_, b_ in ((data.m1, data.b1), (data.m2, data.b2)):
        rows.append(eye - m_ * Vz[q:q + N])
        lo.append(np.full(N, -INF))
        hi.append(b_ + m_ * v_const[q:q + N])
    # speed bounds
    rows.append(Vz[1:N + 1])
    lo.append(0.0 - v_const[1:N + 1])
    hi.append(data.v_max - v_const[1:N + 1])

    safety_rows, safety_hi = [], []
    Hs = Sz[1:N + 1] + data.tau_min * Vz[1:N + 1]
    for s_pred, _, enforce in data.scenarios:
        if not enforce:
            continue
        rhs = (np.asarray(s_pred[:N], float) - data.veh_length - data.d_min - margin
               - s_const[1:N + 1] - data.tau_min * v_const[1:N + 1])
        safety_rows.append(Hs)
        safety_hi.append(rhs)

    A = np.vstack(rows)
    lb = np.concatenate(lo)
    ub = np.concatenate(hi)
    # rows with no decision dependence are fixed by the delay; drop them
    keep = np.any(A != 0.0, axis=1)
    A, lb, ub = A[keep], lb[keep], ub[keep]
    if safety_rows:
        As = np.vstack(safety_rows)
        us = np.concatenate(safety_hi)
        keep = np.any(As != 0.0, axis=1)
        As, us = As[keep], us[keep]
    else:
        As, us = np.zeros((0, N)), np.zeros(0)
    ns = As.shape[0]

    if data.slack_penalty is None:
        A = np.vstack([A, As])
        lb = np.concatenate([lb, np.full(ns, -INF)])
        ub = np.concatenate([ub, us])
        return CondensedMpc(QpProblem(P, qv, A, lb, ub), N, ns)

    nz = N + ns
    Pz = np.zeros((nz, nz))
    Pz[:N, :N] = P
    qz = np.concatenate([qv, np.full(ns, data.slack_penalty)])
    A_top = np.hstack([A, np.zeros((A.shape[0], ns))])
    A_saf = np.hstack([As, -np.eye(ns)])
    A_slk = np.hstack([np.zeros((ns, N)), np.eye(ns)])
    A = np.vstack([A_top, A_saf, A_slk])
    lb = np.concatenate([lb, np.full(ns, -INF), np.zeros(ns)])
    ub = np.concatenate([ub, us, np.full(ns, INF)])
    return CondensedMpc(QpProblem(Pz, qz, A, lb, ub), N, ns)
