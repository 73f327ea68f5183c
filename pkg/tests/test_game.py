from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecosim.dynamics import TrafficState, VehicleState
from ecosim.game import (
    Action,
    GameParams,
    Mode,
    Role,
    boxes_overlap,
    candidate_sets,
    cutin_policy,
    enumerate_sequences,
    follower_choice,
    is_mid_change,
    leader_choice,
    pairwise_rewards,
    preceding_vehicle,
    rollout,
    rollout_vehicle,
    solve_cutin_game,
    solve_follower,
    solve_leader,
    step_reward,
)

import oracles

P = GameParams()


def traffic(**vehicles):
    return TrafficState({int(k[1:]): VehicleState(*v) for k, v in vehicles.items()})


# -- geometry -----------------------------------------------------------------


def test_preceding_vehicle_examples():
    t = traffic(v0=(0, 20, 0), v2=(100, 16, 0), v3=(120, 16, 4))
    assert preceding_vehicle(0, t, 5.0, 2.5) == 2
    t = traffic(v0=(0, 20, 0), v1=(30, 16, 1.5), v2=(100, 16, 0))
    assert preceding_vehicle(0, t, 5.0, 2.5) == 1
    t = traffic(v0=(0, 20, 0), v1=(-30, 16, 0))
    assert preceding_vehicle(0, t, 5.0, 2.5) is None


@given(st.floats(-20, 20), st.floats(-8, 8), st.floats(-20, 20), st.floats(-8, 8))
def test_overlap_symmetric(s1, l1, s2, l2):
    assert boxes_overlap(s1, l1, s2, l2, 5, 2.5) == boxes_overlap(s2, l2, s1, l1, 5, 2.5)


# -- rewards ------------------------------------------------------------------


def test_standstill_reward():
    t = traffic(v0=(0, 0, 0))
    assert step_reward(t, 0, Action.MAINTAIN, P) == pytest.approx(-40.0)


def test_overlap_costs_collision_weight():
    alone = step_reward(traffic(v0=(0, 0, 0)), 0, Action.MAINTAIN, P)
    # the other box sits behind, so only r1 changes
    hit = step_reward(traffic(v0=(0, 0, 0), v1=(-3, 0, 0)), 0, Action.MAINTAIN, P)
    assert hit - alone == pytest.approx(-400.0)


def test_headway_boundary_not_penalized():
    v = 10.0
    at = traffic(v0=(0, v, 0), v2=(5 + v * P.tau_desired, v, 0))
    inside = traffic(v0=(0, v, 0), v2=(5 + v * P.tau_desired - 0.01, v, 0))
    r_at = step_reward(at, 0, Action.MAINTAIN, P)
    r_in = step_reward(inside, 0, Action.MAINTAIN, P)
    assert r_at - r_in == pytest.approx(5.0)


def test_rollout_all_maintain_closed_form():
    t = traffic(v0=(0, 20, 0), v1=(0, 16, 4))
    seq = [Action.MAINTAIN] * P.horizon
    out = rollout(t, 1, seq, 0, seq, P)
    expected = sum(
        P.discount**k * (P.weights[2] * 16 * (k + 1) + P.weights[3] * (16 - 30) / 30)
        for k in range(P.horizon)
    )
    assert out.reward_self == pytest.approx(expected, rel=1e-12)


def test_rollout_collision_at_second_step():
    # same lane, closing at 10 m/s from 20 m apart: boxes overlap for 1.5 < t < 2.5
    t = traffic(v0=(0, 20, 0), v1=(20, 10, 0))
    seq = [Action.MAINTAIN] * P.horizon
    free = rollout(t, 1, seq, 0, seq, replace(P, weights=(0, 5, 1, 40, 0, 0.1)))
    hit = rollout(t, 1, seq, 0, seq, P)
    diff = hit.reward_self - free.reward_self
    # r1 at step indices 1 and 2 only, discounted
    assert diff == pytest.approx(-400 * (P.discount + P.discount**2))


def test_single_step_undiscounted_equals_step_reward():
    p = replace(P, horizon=1, discount=1.0)
    t = traffic(v0=(0, 20, 0), v1=(10, 16, 4))
    out = rollout(t, 1, [Action.MILD_ACCEL], 0, [Action.MAINTAIN], p)
    assert out.reward_self == pytest.approx(step_reward(out.traffic[1], 1, Action.MILD_ACCEL, p, collided=False))


def test_pairwise_matches_scalar_rollout():
    t = traffic(v0=(0, 20, 0), v1=(30, 16, 4), v2=(100, 16, 0), v3=(60, 16, 4))
    cand = candidate_sets(t, 1, P)
    rng = np.random.default_rng(0)
    rows = rng.choice(len(cand.cutin), 8, replace=False)
    cols = rng.choice(len(cand.ego), 8, replace=False)
    Ra, Rb = pairwise_rewards(t, 1, cand.cutin[rows], 0, cand.ego[cols], P)
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            r = rollout(t, 1, cand.cutin[i], 0, cand.ego[j], P)
            assert Ra[a, b] == pytest.approx(r.reward_self, abs=1e-9)
            assert Rb[a, b] == pytest.approx(r.reward_other, abs=1e-9)


# -- sequences ----------------------------------------------------------------


def test_sequence_counts():
    assert len(enumerate_sequences(Mode.STRAIGHT, P)) == 243
    assert len(enumerate_sequences(Mode.LANE_CHANGE, P)) == 108
    assert len(enumerate_sequences(Mode.ABORT, P)) == 32
    assert len(enumerate_sequences(Mode.STRAIGHT, replace(P, horizon=2))) == 9


def test_lane_change_template():
    seqs = enumerate_sequences(Mode.LANE_CHANGE, P)
    for seq in seqs:
        steer = np.flatnonzero(seq == Action.STEER_RIGHT)
        assert len(steer) == 2 and steer[1] == steer[0] + 1
        others = np.delete(seq, steer)
        assert set(others) <= {Action.MAINTAIN, Action.HARD_ACCEL, Action.HARD_DECEL}
    _, _, l, _, _ = rollout_vehicle(VehicleState(0, 16, 4.0), seqs, P)
    assert np.allclose(l[:, -1], 0.0)


def test_enumeration_order_is_lexicographic():
    seqs = enumerate_sequences(Mode.STRAIGHT, P)
    assert [tuple(s) for s in seqs] == sorted(tuple(s) for s in seqs)


# -- strategies ---------------------------------------------------------------


def test_follower_max_min_examples():
    assert follower_choice(np.array([[5.0]])) == (0, 5.0)
    assert follower_choice(np.array([[3.0, 0.0], [2.0, 1.0]])) == (1, 1.0)
    assert follower_choice(np.array([[1.0, 2.0], [2.0, 1.0]]))[0] == 0


def test_leader_examples():
    # unique follower best response (row 1 of follower payoffs)
    Rf = np.array([[0.0, 0.0], [5.0, 5.0]])  # [follower, leader]
    Rl = np.array([[1.0, 4.0], [3.0, 2.0]])  # [leader, follower]
    assert leader_choice(Rl, Rf) == (0, 4.0)
    # follower indifferent: leader maximizes its worst case over both
    Rf = np.array([[1.0, 1.0], [1.0, 1.0]])
    Rl = np.array([[10.0, 0.0], [3.0, 2.0]])
    assert leader_choice(Rl, Rf) == (1, 2.0)
    # diagonal-dominant shared interest with a strict follower preference:
    # both end on the (0, 0) cell
    R = np.array([[5.0, 1.0], [0.0, 4.0]])
    Rf = np.array([[5.0, 1.0], [0.0, 0.0]])
    assert leader_choice(R, Rf) == (0, 5.0)


def _random_state(rng):
    s0 = rng.uniform(-10, 10)
    return {
        0: (s0, rng.uniform(10, 25), 0.0),
        1: (rng.uniform(-15, 40), rng.uniform(10, 25), float(rng.choice([4.0, rng.uniform(0.5, 3.5)]))),
        2: (s0 + rng.uniform(20, 100), 16.0, 0.0),
        3: (rng.uniform(40, 90), 16.0, 4.0),
    }


def test_solvers_match_exhaustive_loops():
    p = replace(P, horizon=2)
    rng = np.random.default_rng(1234)
    U_c = oracles.straight_sequences(2) + [[6, 6]]
    U_e = oracles.straight_sequences(2)
    Uc, Ue = np.array(U_c), np.array(U_e)
    for _ in range(100):
        states = _random_state(rng)
        t = TrafficState({k: VehicleState(*v) for k, v in states.items()})
        seq_f, q_f = solve_follower(t, p, 1, Uc, 0, Ue)
        i_f, o_f = oracles.follower_loop(states, p, 1, U_c, 0, U_e)
        assert list(seq_f) == U_c[i_f]
        assert q_f == pytest.approx(o_f, rel=1e-12, abs=1e-9)
        seq_l, q_l = solve_leader(t, p, 1, Uc, 0, Ue)
        i_l, o_l = oracles.leader_loop(states, p, 1, U_c, 0, U_e)
        assert list(seq_l) == U_c[i_l]
        assert q_l == pytest.approx(o_l, rel=1e-12, abs=1e-9)


def test_leader_value_not_below_follower_value():
    rng = np.random.default_rng(5)
    for _ in range(20):
        states = _random_state(rng)
        t = TrafficState({k: VehicleState(*v) for k, v in states.items()})
        sol = solve_cutin_game(t, P)
        assert sol.values[Role.LEADER] >= sol.values[Role.FOLLOWER] - 1e-9


def test_weight_scaling():
    t = traffic(v0=(0, 20, 0), v1=(30, 16, 4), v2=(100, 16, 0), v3=(60, 16, 4))
    base = solve_cutin_game(t, P)
    scaled = solve_cutin_game(t, replace(P, weights=tuple(3.0 * w for w in P.weights)))
    for r in Role:
        assert np.array_equal(base.sequences[r], scaled.sequences[r])
        assert scaled.values[r] == pytest.approx(3.0 * base.values[r], rel=1e-9)


# -- cut-in policy ------------------------------------------------------------


def test_front_scenario_prefers_lane_change():
    t = traffic(v0=(0, 20, 0), v1=(30, 16, 4), v2=(100, 16, 0), v3=(60, 16, 4))
    for r in Role:
        seq = cutin_policy(t, r, P)
        assert Action.STEER_RIGHT in seq


def test_mid_change_candidates_keep_steering():
    t = traffic(v0=(0, 20, 0), v1=(30, 16, 2.0), v2=(100, 16, 0), v3=(60, 16, 4))
    cand = candidate_sets(t, 1, P)
    assert set(cand.cutin[:, 0]) == {Action.STEER_RIGHT, Action.STEER_LEFT}


def test_lateral_noise_is_not_a_lane_change():
    # a few centimetres off the lane centre must still allow braking
    t = traffic(v0=(0, 20, 0), v1=(30, 16, 3.97), v2=(100, 16, 0), v3=(60, 16, 4))
    assert not is_mid_change(t[1], P)
    cand = candidate_sets(t, 1, P)
    assert Action.HARD_DECEL in set(cand.cutin[:, 0])
    assert is_mid_change(VehicleState(0, 16, 3.0), P)


def test_policy_precondition():
    t = traffic(v0=(0, 20, 0), v1=(30, 16, 0.5))
    with pytest.raises(ValueError):
        cutin_policy(t, Role.LEADER, P)


def test_solution_cache_returns_same_answer():
    t = traffic(v0=(0, 20, 0), v1=(25, 17, 4), v2=(100, 16, 0), v3=(60, 16, 4))
    a = solve_cutin_game(t, P)
    b = solve_cutin_game(TrafficState(dict(t.vehicles)), P)
    assert a is b


def test_params_validation():
    with pytest.raises(ValueError):
        GameParams(a_mild=3.0)
    with pytest.raises(ValueError):
        GameParams(discount=0.0)
    with pytest.raises(ValueError):
        GameParams(weights=(1, 2, 3))
