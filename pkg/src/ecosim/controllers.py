"""Ego controllers: OVM car following, the eco-driving MPC baseline and the
cut-in-aware eco-driving controller, behind one step interface."""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import estimator as est
from .dynamics import TrafficState, VehicleState
from .game import Action, GameParams, Role, preceding_vehicle, solve_cutin_game
from .mpc import MpcParams, MpcResult, plan, virtual_preceding
from .prediction import (
    PredictedTrajectory,
    build_bundle,
    predict_non_cutin,
    sequence_to_trajectory,
)


class ControllerKind(enum.Enum):
    OVM = "ovm"
    ECO_BASELINE = "eco"
    ECO_CUTIN_AWARE = "eco-cutin"

    @classmethod
    def parse(cls, name: str) -> "ControllerKind":
        try:
            return cls(name)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown controller {name!r} (expected one of {names})") from None


@dataclass(frozen=True)
class OvmParams:
    alpha: float = 0.4
    beta: float = 0.5
    v_max: float = 30.0
    d: float = 5.0
    tau: float = 1.67
    veh_length: float = 5.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("OVM gains alpha and beta must be positive")


def range_policy(h, params: OvmParams):
    return np.minimum(params.v_max, np.maximum(0.0, (h - params.d) / params.tau))


def speed_policy(v_p, params: OvmParams):
    return np.minimum(params.v_max, v_p)


def ovm_accel(ego: VehicleState, preceding: Optional[VehicleState], params: OvmParams) -> float:
    """Desired acceleration; free flow (both policies at v_max) without a leader."""
    if preceding is None:
        V = W = params.v_max
    else:
        h = preceding.s - ego.s - params.veh_length
        V = range_policy(h, params)
        W = speed_policy(preceding.v, params)
    return float(params.alpha * (V - ego.v) + params.beta * (W - ego.v))


@dataclass
class StepInfo:
    """Per-step diagnostics returned with every command."""

    a_desired: float
    preceding: Optional[int] = None
    feasible: bool = True
    slack_used: bool = False
    posterior: Optional[est.RolePosterior] = None
    estimator_skipped: bool = False
    sigma: frozenset = frozenset()
    crossing: Dict[Role, Optional[int]] = field(default_factory=dict)
    plan_nc: Optional[MpcResult] = None
    plan_c: Optional[MpcResult] = None


@dataclass(frozen=True)
class ControllerSetup:
    """Everything a controller needs besides the observed traffic."""

    mpc: MpcParams = field(default_factory=MpcParams)
    game: GameParams = field(default_factory=GameParams)
    ovm: OvmParams = field(default_factory=OvmParams)
    noise: est.NoiseModel = field(default_factory=est.NoiseModel)
    prior: est.RolePosterior = field(default_factory=est.RolePosterior)
    floor: float = est.DEFAULT_FLOOR
    ego_idx: int = 0
    cutin_idx: Optional[int] = 1
    handoff_tol: float = 1.0
    replan_every: int = 5  # game replans, in simulation steps
    sim_dt: float = 0.1
    sigma_rule: str = "crossing"


class Controller:
    """Stateful wrapper owning the command history (and, for the cut-in-aware
    kind, the role posterior and the actions each role is holding)."""

    def __init__(self, kind: ControllerKind, setup: ControllerSetup):
        self.kind = kind
        self.setup = setup
        q = setup.mpc.delay_steps
        self.history: deque = deque([0.0] * q, maxlen=q) if q else deque(maxlen=0)
        self.posterior = setup.prior
        self._held: Optional[Dict[Role, Action]] = None
        self._prev: Optional[TrafficState] = None

    # -- shared pieces ------------------------------------------------------

    def preceding(self, traffic: TrafficState) -> Optional[int]:
        g = self.setup.game
        return preceding_vehicle(self.setup.ego_idx, traffic, g.veh_length, g.veh_width)

    def non_cutin_prediction(self, traffic: TrafficState):
        idx = self.preceding(traffic)
        ego = traffic[self.setup.ego_idx]
        lead = traffic[idx] if idx is not None else virtual_preceding(ego, self.setup.mpc)
        p = self.setup.mpc
        return idx, predict_non_cutin(lead, p.horizon, p.dt)

    def _commit(self, a: float) -> float:
        if self.history.maxlen:
            self.history.append(a)
        return a

    def cutin_active(self, traffic: TrafficState) -> bool:
        c = self.setup.cutin_idx
        if c is None or c not in traffic:
            return False
        return abs(traffic[c].l - self.setup.game.l_target) >= self.setup.handoff_tol

    # -- steps --------------------------------------------------------------

    def step(self, traffic: TrafficState) -> StepInfo:
        if self.kind is ControllerKind.OVM:
            info = self.ovm_step(traffic)
        elif self.kind is ControllerKind.ECO_BASELINE:
            info = self.eco_baseline_step(traffic)
        else:
            info = self.algorithm1_step(traffic)
        self._commit(info.a_desired)
        self._prev = traffic
        return info

    def ovm_step(self, traffic: TrafficState) -> StepInfo:
        idx = self.preceding(traffic)
        lead = traffic[idx] if idx is not None else None
        a = ovm_accel(traffic[self.setup.ego_idx], lead, self.setup.ovm)
        return StepInfo(a, preceding=idx)

    def eco_baseline_step(self, traffic: TrafficState) -> StepInfo:
        idx, pred = self.non_cutin_prediction(traffic)
        res = plan(traffic[self.setup.ego_idx], list(self.history), pred, self.setup.mpc)
        return StepInfo(
            res.a_desired, preceding=idx, feasible=res.feasible,
            slack_used=res.slack_used, plan_nc=res,
        )

    def _update_posterior(self, traffic: TrafficState) -> bool:
        """Bayes step on the transition observed since the previous call."""
        if self._prev is None or self._held is None:
            return False
        c = self.setup.cutin_idx
        res = {
            role: est.residual(traffic[c], self._prev, act, self.setup.game,
                               self.setup.sim_dt, c)
            for role, act in self._held.items()
        }
        out = est.update(self.posterior, res, self.setup.noise, self.setup.floor)
        self.posterior = out.posterior
        return out.skipped

    def algorithm1_step(self, traffic: TrafficState) -> StepInfo:
        s = self.setup
        # (1)-(2) no-cut-in prediction and plan
        info = self.eco_baseline_step(traffic)
        info.posterior = self.posterior
        if not self.cutin_active(traffic):
            self._held = None
            return info
        # (3) role estimation on the last observed transition
        info.estimator_skipped = self._update_posterior(traffic)
        info.posterior = self.posterior
        # (4) per-role cut-in predictions from the game
        sol = solve_cutin_game(traffic, s.game, s.cutin_idx, s.ego_idx)
        if traffic.step % s.replan_every == 0 or self._held is None:
            self._held = {r: Action(int(sol.sequences[r][0])) for r in Role}
        cut = traffic[s.cutin_idx]
        preds: Dict[Role, PredictedTrajectory] = {
            r: sequence_to_trajectory(cut, sol.sequences[r], s.game, s.mpc.horizon, s.mpc.dt)
            for r in Role
        }
        # (5) crossing steps and role subset
        ego = traffic[s.ego_idx]
        _, pred_nc = self.non_cutin_prediction(traffic)
        bundle = build_bundle(
            pred_nc, preds, self.posterior.as_dict(), info.plan_nc.planned_s,
            ego.l, s.game.lane_width, s.mpc.delta_s, s.sigma_rule,
        )
        info.crossing = bundle.crossing
        info.sigma = frozenset(bundle.sigma)
        # (6) branch on the subset
        if not bundle.sigma:
            return info
        res = plan(ego, list(self.history), bundle, s.mpc)
        info.a_desired = res.a_desired
        info.feasible = res.feasible
        info.slack_used = res.slack_used
        info.plan_c = res
        return info
