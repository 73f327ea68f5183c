import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecosim import qp
from ecosim.qp import HorizonData, QpProblem, Status, condense_mpc, plan_states, propagation_matrices

import oracles

INF = np.inf


def random_box_qp(rng, n):
    M = rng.standard_normal((n, n))
    P = M @ M.T + 0.1 * n * np.eye(n)
    q = rng.standard_normal(n) * 5
    lo = -rng.uniform(0.1, 2.0, n)
    hi = rng.uniform(0.1, 2.0, n)
    # some sides unbounded
    lo[rng.random(n) < 0.15] = -INF
    hi[rng.random(n) < 0.15] = INF
    return P, q, lo, hi


def test_clamped_scalar():
    sol = qp.solve(QpProblem([[2.0]], [-6.0], [[1.0]], [0.0], [2.0]))
    assert sol.status is Status.SOLVED
    assert sol.z[0] == pytest.approx(2.0, abs=1e-6)


def test_equality_constraint():
    sol = qp.solve(QpProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0], [1.0]))
    assert sol.z == pytest.approx([0.5, 0.5], abs=1e-6)


def test_unconstrained():
    sol = qp.solve(QpProblem(np.diag([2.0, 4.0]), [-2.0, -4.0], np.zeros((0, 2)), [], []))
    assert sol.z == pytest.approx([1.0, 1.0], abs=1e-10)


def test_primal_infeasible_detected():
    A = np.array([[1.0], [1.0]])
    sol = qp.solve(QpProblem([[1.0]], [0.0], A, [2.0, -INF], [INF, 1.0]))
    assert sol.status is Status.PRIMAL_INFEASIBLE


def test_max_iter_reported():
    rng = np.random.default_rng(3)
    P, q, lo, hi = random_box_qp(rng, 20)
    sol = qp.solve(QpProblem(P, q, np.eye(20), lo, hi), max_iter=3, polish_tol=0.0)
    assert sol.status is Status.MAX_ITER


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem([[1.0, 2.0], [0.0, 1.0]], [0, 0], np.eye(2), [0, 0], [1, 1])
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), [0, 0], np.eye(2), [1, 1], [0, 0])
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), [0, 0], np.eye(2), [0], [1])


def test_random_box_qps_against_active_set_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_z = worst_kkt = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 31))
        P, q, lo, hi = random_box_qp(rng, n)
        sol = qp.solve(QpProblem(P, q, np.eye(n), lo, hi))
        assert sol.status is Status.SOLVED
        ref = oracles.box_qp_active_set(P, q, lo, hi)
        worst_z = max(worst_z, float(np.max(np.abs(sol.z - ref))))
        worst_kkt = max(worst_kkt, *oracles.kkt_residuals(P, q, np.eye(n), lo, hi, sol.z, sol.y))
    elapsed = time.perf_counter() - t0
    assert worst_z < 1e-4
    assert worst_kkt < 1e-6
    assert elapsed < 10.0


def test_general_qp_against_cvxopt():
    cvxopt = pytest.importorskip("cvxopt")
    cvxopt.solvers.options["show_progress"] = False
    cvxopt.solvers.options["abstol"] = 1e-10
    cvxopt.solvers.options["reltol"] = 1e-10
    cvxopt.solvers.options["feastol"] = 1e-10
    rng = np.random.default_rng(11)
    for _ in range(20):
        n, m = 12, 18
        M = rng.standard_normal((n, n))
        P = M @ M.T + np.eye(n)
        q = rng.standard_normal(n)
        A = rng.standard_normal((m, n))
        lb = -rng.uniform(0.5, 2, m)
        ub = rng.uniform(0.5, 2, m)
        sol = qp.solve(QpProblem(P, q, A, lb, ub))
        G = np.vstack([A, -A])
        h = np.concatenate([ub, -lb])
        ref = cvxopt.solvers.qp(*(cvxopt.matrix(x) for x in (P, q, G, h)))
        assert np.max(np.abs(sol.z - np.array(ref["x"]).ravel())) < 1e-5


def test_deterministic():
    rng = np.random.default_rng(8)
    P, q, lo, hi = random_box_qp(rng, 15)
    prob = QpProblem(P, q, np.eye(15), lo, hi)
    a, b = qp.solve(prob), qp.solve(prob)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.y, b.y) and a.iterations == b.iterations


def test_dump_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    P, q, lo, hi = random_box_qp(rng, 6)
    prob = QpProblem(P, q, np.eye(6), lo, hi)
    path = tmp_path / "p.txt"
    qp.dump_problem(prob, path)
    back = qp.load_problem(path)
    for name in ("P", "q", "A", "lb", "ub"):
        assert np.array_equal(getattr(back, name), getattr(prob, name))


# -- condensation -------------------------------------------------------------


def base_data(**kw):
    args = dict(s0=0.0, v0=20.0, fixed_accels=np.zeros(0),
                scenarios=[(np.full(50, 60.0) + 16 * 0.1 * np.arange(1, 51), 1.0, True)],
                margin=0.1 * 0.1 * np.arange(1, 51))
    args.update(kw)
    return HorizonData(**args)


def test_two_step_hand_condensation():
    dt, qg, qa, tau, d, L = 0.5, 1.0, 10.0, 1.5, 5.0, 5.0
    s0, v0 = 0.0, 10.0
    sp = np.array([30.0, 30.0])  # stationary target
    data = HorizonData(s0=s0, v0=v0, fixed_accels=np.zeros(0), scenarios=[(sp, 1.0, False)],
                       dt=dt, horizon=2, q_g=qg, q_a=qa, tau=tau, d=d, veh_length=L, v_max=100,
                       u_min=-100, u_max=100, b1=100, b2=100)
    cond = condense_mpc(data)
    # hand substitution: headway error e_k = c_k - g_k . a
    g1 = np.array([0.5 * dt**2 + tau * dt, 0.0])
    g2 = np.array([1.5 * dt**2 + tau * dt, 0.5 * dt**2 + tau * dt])
    c1 = sp[0] - L - d - (s0 + v0 * dt) - tau * v0
    c2 = sp[1] - L - d - (s0 + 2 * v0 * dt) - tau * v0
    G = np.vstack([g1, g2])
    c = np.array([c1, c2])
    P_hand = 2 * (qa * np.eye(2) + qg * G.T @ G)
    q_hand = -2 * qg * G.T @ c
    assert np.allclose(cond.problem.P, P_hand, atol=1e-12)
    assert np.allclose(cond.problem.q, q_hand, atol=1e-12)
    sol = qp.solve(cond.problem)
    assert sol.z == pytest.approx(np.linalg.solve(P_hand, -q_hand), abs=1e-6)


def test_fixed_accels_only_shift_constants():
    a = condense_mpc(base_data(fixed_accels=np.zeros(6)))
    b = condense_mpc(base_data(fixed_accels=np.array([0.3, -0.2, 0.1, 0.0, 0.5, -1.0])))
    assert np.array_equal(a.problem.P, b.problem.P)
    assert np.array_equal(a.problem.A, b.problem.A)
    assert a.n_accel == b.n_accel == 50
    assert not np.allclose(a.problem.q, b.problem.q)


def test_probability_weighting_is_linear():
    k = np.arange(1, 51) * 0.1
    s1 = 60 + 16 * k
    s2 = 35 + 18 * k
    both = condense_mpc(base_data(scenarios=[(s1, 0.7, False), (s2, 0.3, False)]))
    one = condense_mpc(base_data(scenarios=[(s1, 1.0, False)]))
    two = condense_mpc(base_data(scenarios=[(s2, 1.0, False)]))
    assert np.allclose(both.problem.P, 0.7 * one.problem.P + 0.3 * two.problem.P, atol=1e-9)
    assert np.allclose(both.problem.q, 0.7 * one.problem.q + 0.3 * two.problem.q, atol=1e-9)


def test_condensed_states_match_forward_simulation():
    fixed = np.array([0.2, 0.1, 0.0, -0.1, -0.2, 0.3])
    data = base_data(fixed_accels=fixed)
    cond = condense_mpc(data)
    sol = qp.solve(cond.problem)
    s, v = plan_states(data, sol.z[: cond.n_accel])
    a_all = np.concatenate([fixed, sol.z[: cond.n_accel]])
    sk, vk = data.s0, data.v0
    for k, a in enumerate(a_all):
        sk, vk = sk + vk * 0.1 + 0.5 * a * 0.01, vk + a * 0.1
        assert s[k + 1] == pytest.approx(sk, abs=1e-9)
        assert v[k + 1] == pytest.approx(vk, abs=1e-9)


def test_weight_scaling_keeps_argmin():
    a = qp.solve(condense_mpc(base_data()).problem)
    b = qp.solve(condense_mpc(base_data(q_g=3.0, q_a=2880.0)).problem)
    assert np.max(np.abs(a.z - b.z)) < 1e-4


def test_slack_problem_shape():
    data = base_data(slack_penalty=1e6)
    cond = condense_mpc(data)
    assert cond.problem.n == cond.n_accel + cond.n_safety
    assert cond.n_safety == 50


def test_prediction_too_short():
    with pytest.raises(ValueError):
        condense_mpc(base_data(scenarios=[(np.zeros(10), 1.0, True)]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.floats(0.05, 1.0))
def test_propagation_matrices_are_exact(n, dt):
    S, V = propagation_matrices(n, dt)
    a = np.linspace(-1, 1, n)
    s = v = 0.0
    for k in range(n):
        s, v = s + v * dt + 0.5 * a[k] * dt * dt, v + a[k] * dt
        assert S[k + 1] @ a == pytest.approx(s, abs=1e-9)
        assert V[k + 1] @ a == pytest.approx(v, abs=1e-9)
