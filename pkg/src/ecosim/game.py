"""Discrete-action leader-follower game used to model the cut-in vehicle.

Action sequences are integer arrays of :class:`Action` codes with shape
``(n_sequences, horizon)``. Rewards for every (self, other) sequence pair are
computed in one vectorized pass; the follower plays max-min against the whole
opponent set and the leader best-responds to the follower's best-response set.
"""
from __future__ import annotations

import enum
import itertools
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .dynamics import ControlInput, TrafficState, VehicleState, step_kinematics


class Action(enum.IntEnum):
    MAINTAIN = 0
    MILD_ACCEL = 1
    MILD_DECEL = 2
    HARD_ACCEL = 3
    HARD_DECEL = 4
    STEER_LEFT = 5
    STEER_RIGHT = 6


class Role(enum.Enum):
    LEADER = "leader"
    FOLLOWER = "follower"


class Mode(enum.Enum):
    STRAIGHT = "straight"
    LANE_CHANGE = "lane_change"
    ABORT = "abort"


STRAIGHT_ACTIONS = (Action.MAINTAIN, Action.MILD_ACCEL, Action.MILD_DECEL)
LANE_CHANGE_FILL = (Action.MAINTAIN, Action.HARD_ACCEL, Action.HARD_DECEL)
ABORT_FILL = (Action.MAINTAIN, Action.HARD_DECEL)

# Relative tolerance used for every argmax / best-response tie.
TIE_TOL = 1e-9


@dataclass(frozen=True)
class GameParams:
    weights: Tuple[float, ...] = (400.0, 5.0, 1.0, 40.0, 0.0, 0.1)
    discount: float = 0.9
    horizon: int = 5
    dt: float = 1.0
    tau_desired: float = 1.0
    a_mild: float = 1.33
    a_hard: float = 2.0
    v_min: float = 0.0
    v_max: float = 30.0
    veh_length: float = 5.0
    veh_width: float = 2.5
    lane_width: float = 4.0
    l_target: float = 0.0  # centre of the ego lane; the other lane sits at +lane_width
    # overlap is tested at this many evenly spaced instants within each game
    # step (1 = step end only) so fast closings cannot pass between samples
    collision_substeps: int = 10

    def __post_init__(self):
        if len(self.weights) != 6 or min(self.weights) < 0:
            raise ValueError("weights must be six nonnegative numbers")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if not self.a_hard > self.a_mild > 0.0:
            raise ValueError("need a_hard > a_mild > 0")
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")
        if self.collision_substeps < 1:
            raise ValueError("collision_substeps must be at least 1")

    def substep_times(self) -> np.ndarray:
        n = self.collision_substeps
        return self.dt * np.arange(1, n + 1) / n

    @property
    def lateral_bounds(self) -> Tuple[float, float]:
        return self.l_target, self.l_target + self.lane_width

    def action_table(self) -> Tuple[np.ndarray, np.ndarray]:
        """Nominal (a_s, v_l) for every action code."""
        am, ah, vl = self.a_mild, self.a_hard, self.lane_width / 2.0
        acc = np.array([0.0, am, -am, ah, -ah, 0.0, 0.0])
        lat = np.array([0.0, 0.0, 0.0, 0.0, 0.0, vl, -vl])
        return acc, lat


def nominal_input(action: Action, params: GameParams) -> ControlInput:
    acc, lat = params.action_table()
    return ControlInput(float(acc[action]), float(lat[action]))


def effective_input(
    state: VehicleState, action: Action, params: GameParams, dt: float
) -> ControlInput:
    """Nominal input limited so that speed stays in [v_min, v_max] and the
    lateral position stays between the two lane centres over a step of ``dt``."""
    u = nominal_input(action, params)
    lo, hi = params.lateral_bounds
    a = min(max(u.a, (params.v_min - state.v) / dt), (params.v_max - state.v) / dt)
    v_l = min(max(u.v_l, (lo - state.l) / dt), (hi - state.l) / dt)
    if u.a == 0.0:
        a = 0.0
    if u.v_l == 0.0:
        v_l = 0.0
    return ControlInput(a, v_l)


# ---------------------------------------------------------------------------
# Geometry

def boxes_overlap(s1, l1, s2, l2, length: float, width: float):
    """Axis-aligned L x W boxes overlap (touching does not count)."""
    return (np.abs(s1 - s2) < length) & (np.abs(l1 - l2) < width)


def preceding_vehicle(
    self_idx: int, traffic: TrafficState, veh_length: float, veh_width: float
) -> Optional[int]:
    """Nearest vehicle ahead with lateral overlap, or ``None``."""
    me = traffic[self_idx]
    best, best_gap = None, np.inf
    for i in traffic.indices():
        if i == self_idx:
            continue
        other = traffic[i]
        gap = other.s - me.s - veh_length
        if gap >= 0.0 and abs(other.l - me.l) <= veh_width and gap < best_gap:
            best, best_gap = i, gap
    return best


def step_reward(
    next_traffic: TrafficState,
    self_idx: int,
    action: Action,
    params: GameParams,
    l_target: Optional[float] = None,
    collided: Optional[bool] = None,
) -> float:
    """Single-step reward of ``self_idx`` in the already-advanced traffic state.

    ``collided`` overrides the end-of-step overlap test (used when the whole
    step interval has been checked).
    """
    if l_target is None:
        l_target = params.l_target
    me = next_traffic[self_idx]
    L, W = params.veh_length, params.veh_width
    r1 = 0.0
    if collided is not None:
        r1 = -1.0 if collided else 0.0
    else:
        for i in next_traffic.indices():
            if i != self_idx and boxes_overlap(me.s, me.l, next_traffic[i].s, next_traffic[i].l, L, W):
                r1 = -1.0
    r2 = 0.0
    p = preceding_vehicle(self_idx, next_traffic, L, W)
    if p is not None:
        h = next_traffic[p].s - me.s - L
        if h < me.v * params.tau_desired:
            r2 = -1.0
    u = nominal_input(action, params)
    r = np.array([
        r1,
        r2,
        me.s,
        (me.v - params.v_max) / params.v_max,
        -abs(me.l - l_target),
        -np.hypot(u.a, u.v_l),
    ])
    return float(np.dot(params.weights, r))


# ---------------------------------------------------------------------------
# Action sequences

def enumerate_sequences(mode: Mode, params: GameParams) -> np.ndarray:
    n = params.horizon
    if mode is Mode.STRAIGHT:
        seqs = list(itertools.product(STRAIGHT_ACTIONS, repeat=n))
    else:
        steer, fill = (
            (Action.STEER_RIGHT, LANE_CHANGE_FILL)
            if mode is Mode.LANE_CHANGE
            else (Action.STEER_LEFT, ABORT_FILL)
        )
        seqs = []
        for k0 in range(n - 1):
            for rest in itertools.product(fill, repeat=n - 2):
                rest = list(rest)
                seqs.append(tuple(rest[:k0]) + (steer, steer) + tuple(rest[k0:]))
    return np.array(seqs, dtype=np.int64).reshape(-1, n)


def rollout_vehicle(state: VehicleState, seqs: np.ndarray, params: GameParams):
    """Roll every sequence forward at the game step.

    Returns ``(s, v, l, a_eff, vl_eff)``; states have shape ``(M, N + 1)`` and
    the effective (limited) inputs shape ``(M, N)``.
    """
    seqs = np.atleast_2d(seqs)
    m, n = seqs.shape
    dt = params.dt
    acc, lat = params.action_table()
    lo, hi = params.lateral_bounds
    s = np.empty((m, n + 1))
    v = np.empty((m, n + 1))
    l = np.empty((m, n + 1))
    a_eff = np.empty((m, n))
    vl_eff = np.empty((m, n))
    s[:, 0], v[:, 0], l[:, 0] = state.s, state.v, state.l
    for k in range(n):
        a_nom = acc[seqs[:, k]]
        vl_nom = lat[seqs[:, k]]
        a = np.clip(a_nom, (params.v_min - v[:, k]) / dt, (params.v_max - v[:, k]) / dt)
        a = np.where(a_nom == 0.0, 0.0, a)
        vl = np.clip(vl_nom, (lo - l[:, k]) / dt, (hi - l[:, k]) / dt)
        vl = np.where(vl_nom == 0.0, 0.0, vl)
        a_eff[:, k], vl_eff[:, k] = a, vl
        s[:, k + 1] = s[:, k] + v[:, k] * dt + 0.5 * a * dt * dt
        v[:, k + 1] = v[:, k] + a * dt
        l[:, k + 1] = l[:, k] + vl * dt
    return s, v, l, a_eff, vl_eff


def _agent_step_reward(me, others, effort, collide, params: GameParams, l_target: float):
    """Vectorized single-step reward; ``me`` and each entry of ``others`` are
    ``(s, v, l)`` triples of mutually broadcastable arrays at the step end and
    ``collide`` flags overlap anywhere within the step."""
    s, v, l = me
    L, W = params.veh_length, params.veh_width
    gap_min = np.full(np.broadcast(s, *[o[0] for o in others]).shape, np.inf)
    for so, _, lo in others:
        gap = so - s - L
        ok = (gap >= 0.0) & (np.abs(lo - l) <= W)
        gap_min = np.minimum(gap_min, np.where(ok, gap, np.inf))
    w = params.weights
    return (
        -w[0] * collide
        - w[1] * (gap_min < v * params.tau_desired)
        + w[2] * s
        + w[3] * (v - params.v_max) / params.v_max
        - w[4] * np.abs(l - l_target)
        - w[5] * effort
    )


def pairwise_rewards(
    traffic: TrafficState,
    idx_a: int,
    seqs_a: np.ndarray,
    idx_b: int,
    seqs_b: np.ndarray,
    params: GameParams,
) -> Tuple[np.ndarray, np.ndarray]:
    """Discounted cumulative rewards of agents ``a`` and ``b`` for every pair of
    sequences; both returned matrices are indexed ``[i_a, j_b]``. All remaining
    vehicles keep constant speed and lane."""
    seqs_a, seqs_b = np.atleast_2d(seqs_a), np.atleast_2d(seqs_b)
    n = params.horizon
    dt = params.dt
    acc, lat = params.action_table()
    sa, va, la, acc_a, lat_a = rollout_vehicle(traffic[idx_a], seqs_a, params)
    sb, vb, lb, acc_b, lat_b = rollout_vehicle(traffic[idx_b], seqs_b, params)
    tau = params.substep_times()
    L, W = params.veh_length, params.veh_width
    effort_a = np.hypot(acc[seqs_a], lat[seqs_a])
    effort_b = np.hypot(acc[seqs_b], lat[seqs_b])
    rest = [traffic[i] for i in traffic.indices() if i not in (idx_a, idx_b)]
    R_a = np.zeros((len(seqs_a), len(seqs_b)))
    R_b = np.zeros_like(R_a)
    for k in range(n):
        t = (k + 1) * dt
        fixed = [(x.s + x.v * t, x.v, x.l) for x in rest]
        me_a = (sa[:, k + 1, None], va[:, k + 1, None], la[:, k + 1, None])
        me_b = (sb[None, :, k + 1], vb[None, :, k + 1], lb[None, :, k + 1])
        # positions at every substep within step k, shape (M, J)
        ssa = sa[:, k, None] + va[:, k, None] * tau + 0.5 * acc_a[:, k, None] * tau**2
        lsa = la[:, k, None] + lat_a[:, k, None] * tau
        ssb = sb[:, k, None] + vb[:, k, None] * tau + 0.5 * acc_b[:, k, None] * tau**2
        lsb = lb[:, k, None] + lat_b[:, k, None] * tau
        hit_ab = boxes_overlap(ssa[:, None, :], lsa[:, None, :], ssb[None, :, :], lsb[None, :, :], L, W).any(axis=2)
        hit_a = np.zeros(len(seqs_a), dtype=bool)
        hit_b = np.zeros(len(seqs_b), dtype=bool)
        for x in rest:
            sx = x.s + x.v * (k * dt + tau)
            hit_a |= boxes_overlap(ssa, lsa, sx, x.l, L, W).any(axis=1)
            hit_b |= boxes_overlap(ssb, lsb, sx, x.l, L, W).any(axis=1)
        disc = params.discount ** k
        R_a += disc * _agent_step_reward(
            me_a, [me_b] + fixed, effort_a[:, k, None], hit_ab | hit_a[:, None],
            params, params.l_target,
        )
        R_b += disc * _agent_step_reward(
            me_b, [me_a] + fixed, effort_b[None, :, k], hit_ab | hit_b[None, :],
            params, params.l_target,
        )
    return R_a, R_b


@dataclass
class Rollout:
    traffic: list  # TrafficState at game steps 0..N
    reward_self: float
    reward_other: float


def rollout(
    traffic: TrafficState,
    self_idx: int,
    seq_self: Sequence[int],
    other_idx: int,
    seq_other: Sequence[int],
    params: GameParams,
) -> Rollout:
    """Scalar rollout of one sequence pair with discounted cumulative rewards."""
    if len(seq_self) != params.horizon or len(seq_other) != params.horizon:
        raise ValueError("sequences must have the game horizon length")
    states = [traffic]
    r_self = r_other = 0.0
    x = traffic
    L, W = params.veh_length, params.veh_width
    for k in range(params.horizon):
        inputs = {}
        for i in x.indices():
            if i == self_idx:
                inputs[i] = effective_input(x[i], Action(seq_self[k]), params, params.dt)
            elif i == other_idx:
                inputs[i] = effective_input(x[i], Action(seq_other[k]), params, params.dt)
            else:
                inputs[i] = ControlInput(0.0, 0.0)
        hit = {self_idx: False, other_idx: False}
        for tau in params.substep_times():
            mid = {i: step_kinematics(x[i], inputs[i], float(tau)) for i in x.indices()}
            for me in hit:
                for i in mid:
                    if i != me and boxes_overlap(mid[me].s, mid[me].l, mid[i].s, mid[i].l, L, W):
                        hit[me] = True
        nxt = {i: step_kinematics(x[i], inputs[i], params.dt) for i in x.indices()}
        x = TrafficState(nxt, x.step + 1)
        states.append(x)
        disc = params.discount ** k
        r_self += disc * step_reward(x, self_idx, Action(seq_self[k]), params, collided=hit[self_idx])
        r_other += disc * step_reward(x, other_idx, Action(seq_other[k]), params, collided=hit[other_idx])
    return Rollout(states, r_self, r_other)


# ---------------------------------------------------------------------------
# Strategies on payoff matrices

def first_argmax(values: np.ndarray) -> int:
    best = values.max()
    return int(np.flatnonzero(values >= best - TIE_TOL * max(1.0, abs(best)))[0])


def best_set(values: np.ndarray) -> np.ndarray:
    best = values.max()
    return values >= best - TIE_TOL * max(1.0, abs(best))


def follower_choice(payoff: np.ndarray) -> Tuple[int, float]:
    """Max-min over rows of ``payoff[i_follower, j_leader]``."""
    q = payoff.min(axis=1)
    i = first_argmax(q)
    return i, float(q[i])


def leader_choice(payoff_leader: np.ndarray, payoff_follower: np.ndarray) -> Tuple[int, float]:
    """Leader best response to the follower's max-min best-response set.

    ``payoff_leader`` is indexed ``[i_leader, j_follower]`` and
    ``payoff_follower`` is indexed ``[j_follower, i_leader]``.
    """
    brs = best_set(payoff_follower.min(axis=1))
    q = payoff_leader[:, brs].min(axis=1)
    i = first_argmax(q)
    return i, float(q[i])


def solve_follower(
    traffic: TrafficState,
    params: GameParams,
    follower_idx: int,
    U_f: np.ndarray,
    leader_idx: int,
    U_l: np.ndarray,
) -> Tuple[np.ndarray, float]:
    R_f, _ = pairwise_rewards(traffic, follower_idx, U_f, leader_idx, U_l, params)
    i, q = follower_choice(R_f)
    return np.atleast_2d(U_f)[i], q


def solve_leader(
    traffic: TrafficState,
    params: GameParams,
    leader_idx: int,
    U_l: np.ndarray,
    follower_idx: int,
    U_f: np.ndarray,
) -> Tuple[np.ndarray, float]:
    R_l, R_f = pairwise_rewards(traffic, leader_idx, U_l, follower_idx, U_f, params)
    i, q = leader_choice(R_l, R_f.T)
    return np.atleast_2d(U_l)[i], q


# ---------------------------------------------------------------------------
# Cut-in policy

def is_mid_change(state: VehicleState, params: GameParams, tol: Optional[float] = None) -> bool:
    """Between lanes by more than ``tol`` (default an eighth of a lane), so
    lateral noise around a lane centre is not mistaken for a started change."""
    if tol is None:
        tol = params.lane_width / 8.0
    lo, hi = params.lateral_bounds
    return lo + tol < state.l < hi - tol


@dataclass
class CandidateSets:
    cutin: np.ndarray
    ego: np.ndarray


_SEQ_CACHE: Dict[Tuple, np.ndarray] = {}


def _sequences(mode: Mode, params: GameParams) -> np.ndarray:
    key = (mode, params.horizon)
    if key not in _SEQ_CACHE:
        _SEQ_CACHE[key] = enumerate_sequences(mode, params)
    return _SEQ_CACHE[key]


def candidate_sets(traffic: TrafficState, cutin_idx: int, params: GameParams) -> CandidateSets:
    """Cut-in candidates: Straight and LaneChange from a lane centre; once
    between lanes only sequences that keep steering now (finish or abort), so a
    started lane change is never frozen half-way."""
    ego = _sequences(Mode.STRAIGHT, params)
    if not is_mid_change(traffic[cutin_idx], params):
        parts = [_sequences(Mode.STRAIGHT, params), _sequences(Mode.LANE_CHANGE, params)]
    else:
        lc = _sequences(Mode.LANE_CHANGE, params)
        ab = _sequences(Mode.ABORT, params)
        parts = [lc[lc[:, 0] == Action.STEER_RIGHT], ab[ab[:, 0] == Action.STEER_LEFT]]
    return CandidateSets(np.vstack(parts), ego)


@dataclass
class GameSolution:
    """Optimal cut-in sequences for both roles from a single payoff evaluation."""

    sequences: Dict[Role, np.ndarray]
    values: Dict[Role, float]
    candidates: CandidateSets = field(repr=False)


_SOLUTION_CACHE: "OrderedDict[Tuple, GameSolution]" = OrderedDict()
_SOLUTION_CACHE_SIZE = 64


def solve_cutin_game(
    traffic: TrafficState, params: GameParams, cutin_idx: int = 1, ego_idx: int = 0
) -> GameSolution:
    """Pure in its inputs, so results are memoized; the simulated cut-in agent
    and the ego's estimator share solves at the same replan instant."""
    key = (
        tuple((i, st.s, st.v, st.l) for i, st in sorted(traffic.vehicles.items())),
        params,
        cutin_idx,
        ego_idx,
    )
    hit = _SOLUTION_CACHE.get(key)
    if hit is not None:
        _SOLUTION_CACHE.move_to_end(key)
        return hit
    sol = _solve_cutin_game(traffic, params, cutin_idx, ego_idx)
    _SOLUTION_CACHE[key] = sol
    if len(_SOLUTION_CACHE) > _SOLUTION_CACHE_SIZE:
        _SOLUTION_CACHE.popitem(last=False)
    return sol


def _solve_cutin_game(
    traffic: TrafficState, params: GameParams, cutin_idx: int, ego_idx: int
) -> GameSolution:
    cand = candidate_sets(traffic, cutin_idx, params)
    R_c, R_e = pairwise_rewards(traffic, cutin_idx, cand.cutin, ego_idx, cand.ego, params)
    i_f, q_f = follower_choice(R_c)
    i_l, q_l = leader_choice(R_c, R_e.T)
    return GameSolution(
        sequences={Role.FOLLOWER: cand.cutin[i_f], Role.LEADER: cand.cutin[i_l]},
        values={Role.FOLLOWER: q_f, Role.LEADER: q_l},
        candidates=cand,
    )


def cutin_policy(
    traffic: TrafficState,
    role: Role,
    params: GameParams,
    cutin_idx: int = 1,
    ego_idx: int = 0,
    handoff_tol: float = 1.0,
) -> np.ndarray:
    """Optimal action sequence of the cut-in vehicle playing ``role``; its
    first action is what gets held until the next replan."""
    if abs(traffic[cutin_idx].l - params.l_target) < handoff_tol:
        raise ValueError("cut-in already completed; use car following instead")
    return solve_cutin_game(traffic, params, cutin_idx, ego_idx).sequences[role]
