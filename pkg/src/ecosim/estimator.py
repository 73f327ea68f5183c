"""Bayesian filter over the cut-in vehicle's leader/follower role."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

from .dynamics import TrafficState, VehicleState, step_kinematics
from .game import Action, GameParams, Role, effective_input

DEFAULT_FLOOR = 1e-3
# exp() of anything below this underflows in float64
_LOG_TINY = np.log(np.finfo(float).tiny)


@dataclass(frozen=True)
class RolePosterior:
    p_leader: float = 0.5
    p_follower: float = 0.5

    def __post_init__(self):
        if abs(self.p_leader + self.p_follower - 1.0) > 1e-12:
            raise ValueError("role probabilities must sum to one")
        if not (0.0 <= self.p_leader <= 1.0 and 0.0 <= self.p_follower <= 1.0):
            raise ValueError("role probabilities must lie in [0, 1]")

    def __getitem__(self, role: Role) -> float:
        return self.p_leader if role is Role.LEADER else self.p_follower

    def as_dict(self) -> Dict[Role, float]:
        return {Role.LEADER: self.p_leader, Role.FOLLOWER: self.p_follower}


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal covariance over the cut-in vehicle's (s, v, l)."""

    cov: Tuple[float, float, float] = (0.002, 0.001, 0.0002)

    def __post_init__(self):
        if len(self.cov) != 3 or min(self.cov) <= 0:
            raise ValueError("covariance diagonal must hold three positive entries")

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.cov))

    def log_likelihood(self, r: np.ndarray) -> float:
        """Gaussian log density up to the role-independent normalizer."""
        return float(-0.5 * np.sum(np.square(r) / np.asarray(self.cov)))


def apply_action(state: VehicleState, action: Action, params: GameParams, dt: float) -> VehicleState:
    """Advance one vehicle under a held high-level action for ``dt`` seconds."""
    return step_kinematics(state, effective_input(state, action, params, dt), dt)


def residual(
    observed: VehicleState,
    previous_traffic: TrafficState,
    held_action: Action,
    params: GameParams,
    dt: float,
    cutin_idx: int = 1,
) -> np.ndarray:
    """Observed cut-in substate minus its one-step prediction under the action
    held by the hypothesized role."""
    pred = apply_action(previous_traffic[cutin_idx], held_action, params, dt)
    return observed.as_array() - pred.as_array()


@dataclass(frozen=True)
class UpdateResult:
    posterior: RolePosterior
    skipped: bool = False


def _floor(p_leader: float, floor: float) -> RolePosterior:
    p = min(max(p_leader, floor), 1.0 - floor)
    return RolePosterior(p, 1.0 - p)


def update_from_loglik(
    posterior: RolePosterior, loglik: Dict[Role, float], floor: float = DEFAULT_FLOOR
) -> UpdateResult:
    ll_l, ll_f = loglik[Role.LEADER], loglik[Role.FOLLOWER]
    if max(ll_l, ll_f) < _LOG_TINY:
        return UpdateResult(posterior, skipped=True)
    a = np.log(posterior.p_leader) + ll_l
    b = np.log(posterior.p_follower) + ll_f
    # p_leader = 1 / (1 + exp(b - a)), computed stably
    p_leader = float(0.5 * (1.0 + np.tanh(0.5 * (a - b))))
    return UpdateResult(_floor(p_leader, floor))


def update(
    posterior: RolePosterior,
    residuals: Dict[Role, np.ndarray],
    noise: NoiseModel,
    floor: float = DEFAULT_FLOOR,
) -> UpdateResult:
    """One Bayes step with Gaussian likelihoods of the per-role residuals."""
    loglik = {role: noise.log_likelihood(np.asarray(r)) for role, r in residuals.items()}
    return update_from_loglik(posterior, loglik, floor)


def batch_update(
    posterior: RolePosterior,
    residual_seq: Iterable[Dict[Role, np.ndarray]],
    noise: NoiseModel,
    floor: float = DEFAULT_FLOOR,
) -> RolePosterior:
    """Accumulate log-likelihoods over several steps, then apply one update."""
    total = {Role.LEADER: 0.0, Role.FOLLOWER: 0.0}
    for res in residual_seq:
        for role, r in res.items():
            total[role] += noise.log_likelihood(np.asarray(r))
    a = np.log(posterior.p_leader) + total[Role.LEADER]
    b = np.log(posterior.p_follower) + total[Role.FOLLOWER]
    return _floor(float(0.5 * (1.0 + np.tanh(0.5 * (a - b)))), floor)
