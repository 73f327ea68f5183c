"""Preceding-vehicle predictions over the MPC horizon, with and without the
cut-in vehicle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Set

import numpy as np

from .dynamics import TrafficState, VehicleState
from .game import GameParams, GameSolution, Role, rollout_vehicle, solve_cutin_game


@dataclass(frozen=True)
class PredictedTrajectory:
    """States at steps k = 1..N (index 0 holds step 1)."""

    s: np.ndarray
    v: np.ndarray
    l: np.ndarray

    def __len__(self) -> int:
        return len(self.s)

    def at(self, k: int) -> VehicleState:
        return VehicleState(float(self.s[k - 1]), float(self.v[k - 1]), float(self.l[k - 1]))


def integrate_inputs(state: VehicleState, a: np.ndarray, v_l: np.ndarray, dt: float) -> PredictedTrajectory:
    """Exact piecewise-constant integration of per-step inputs."""
    n = len(a)
    s = np.empty(n)
    v = np.empty(n)
    l = np.empty(n)
    sk, vk, lk = state.s, state.v, state.l
    for k in range(n):
        sk = sk + vk * dt + 0.5 * a[k] * dt * dt
        vk = vk + a[k] * dt
        lk = lk + v_l[k] * dt
        s[k], v[k], l[k] = sk, vk, lk
    return PredictedTrajectory(s, v, l)


def predict_non_cutin(preceding: VehicleState, horizon: int, dt: float) -> PredictedTrajectory:
    k = np.arange(1, horizon + 1)
    return PredictedTrajectory(
        preceding.s + preceding.v * dt * k,
        np.full(horizon, preceding.v),
        np.full(horizon, preceding.l),
    )


def sequence_to_trajectory(
    state: VehicleState, seq: np.ndarray, params: GameParams, horizon: int, dt: float
) -> PredictedTrajectory:
    """Zero-order hold of the game's (limited) inputs onto the MPC grid; past the
    game horizon the last speed and lateral position are held."""
    ratio = params.dt / dt
    sub = int(round(ratio))
    if abs(ratio - sub) > 1e-9:
        raise ValueError("game step must be an integer multiple of the MPC step")
    _, _, _, a_eff, vl_eff = rollout_vehicle(state, np.atleast_2d(seq), params)
    a = np.zeros(horizon)
    v_l = np.zeros(horizon)
    m = min(horizon, sub * params.horizon)
    a[:m] = np.repeat(a_eff[0], sub)[:m]
    v_l[:m] = np.repeat(vl_eff[0], sub)[:m]
    return integrate_inputs(state, a, v_l, dt)


def predict_cutin(
    traffic: TrafficState,
    role: Role,
    params: GameParams,
    horizon: int,
    dt: float,
    cutin_idx: int = 1,
    ego_idx: int = 0,
    solution: Optional[GameSolution] = None,
) -> PredictedTrajectory:
    if solution is None:
        solution = solve_cutin_game(traffic, params, cutin_idx, ego_idx)
    return sequence_to_trajectory(traffic[cutin_idx], solution.sequences[role], params, horizon, dt)


def crossing_step(traj: PredictedTrajectory, ego_lateral, lane_width: float) -> Optional[int]:
    """First step k (1-based) where the lateral offset to the ego is within half
    a lane, or ``None``."""
    inside = np.abs(traj.l - ego_lateral) <= lane_width / 2.0
    hits = np.flatnonzero(inside)
    return int(hits[0]) + 1 if hits.size else None


SIGMA_RULES = ("crossing", "any")


def role_subset(
    cutin: Dict[Role, PredictedTrajectory],
    ego_planned_s: np.ndarray,
    delta_s: float,
    crossing: Dict[Role, Optional[int]],
    rule: str = "crossing",
) -> Set[Role]:
    """Roles under which the cut-in enters the lane ahead of the ego's
    no-cut-in plan.

    ``rule="crossing"`` compares positions at the crossing step only: a
    prediction that merges behind and later passes the ego in its own lane
    describes a collision, not a cut-in in front. ``rule="any"`` accepts any
    step from the crossing on.
    """
    if rule not in SIGMA_RULES:
        raise ValueError(f"unknown role-subset rule {rule!r}")
    ego_planned_s = np.asarray(ego_planned_s)
    sigma = set()
    for role, traj in cutin.items():
        k0 = crossing.get(role)
        if k0 is None:
            continue
        stop = k0 if rule == "crossing" else len(traj)
        ahead = traj.s[k0 - 1:stop] - ego_planned_s[k0 - 1:stop] >= delta_s
        if np.any(ahead):
            sigma.add(role)
    return sigma


def fuse(non_cutin: PredictedTrajectory, cutin: PredictedTrajectory, k_cut: int) -> PredictedTrajectory:
    """Splice: the current preceding vehicle before ``k_cut``, the cut-in vehicle
    from ``k_cut`` on. The jump at ``k_cut`` is kept."""
    if len(non_cutin) != len(cutin):
        raise ValueError("trajectories must share the horizon")
    j = k_cut - 1
    return PredictedTrajectory(
        np.concatenate([non_cutin.s[:j], cutin.s[j:]]),
        np.concatenate([non_cutin.v[:j], cutin.v[j:]]),
        np.concatenate([non_cutin.l[:j], cutin.l[j:]]),
    )


@dataclass
class PredictionBundle:
    non_cutin: PredictedTrajectory
    cutin: Dict[Role, PredictedTrajectory]
    probabilities: Dict[Role, float]
    crossing: Dict[Role, Optional[int]]
    sigma: Set[Role] = field(default_factory=set)
    fused: Dict[Role, PredictedTrajectory] = field(default_factory=dict)

    def conditioned(self) -> Dict[Role, float]:
        """Posterior mass renormalized over the role subset."""
        total = sum(self.probabilities[r] for r in self.sigma)
        if total <= 0:
            return {r: 1.0 / len(self.sigma) for r in self.sigma}
        return {r: self.probabilities[r] / total for r in self.sigma}


def build_bundle(
    non_cutin: PredictedTrajectory,
    cutin: Dict[Role, PredictedTrajectory],
    probabilities: Dict[Role, float],
    ego_planned_s: np.ndarray,
    ego_lateral: float,
    lane_width: float,
    delta_s: float,
    rule: str = "crossing",
) -> PredictionBundle:
    crossing = {r: crossing_step(t, ego_lateral, lane_width) for r, t in cutin.items()}
    sigma = role_subset(cutin, ego_planned_s, delta_s, crossing, rule)
    fused = {r: fuse(non_cutin, cutin[r], crossing[r]) for r in sigma}
    return PredictionBundle(non_cutin, cutin, dict(probabilities), crossing, sigma, fused)
