"""Eco-driving MPC: headway policies and the receding-horizon plan."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import qp
from .dynamics import PowertrainParams, VehicleState
from .prediction import PredictedTrajectory, PredictionBundle


@dataclass(frozen=True)
class MpcParams:
    dt: float = 0.1
    horizon: int = 50
    delay_steps: int = 6
    q_g: float = 1.0
    q_a: float = 960.0
    tau: float = 1.67
    d: float = 5.0
    tau_min: float = 0.67
    d_min: float = 3.0
    v_max: float = 30.0
    eta: float = 0.03
    margin_rate: float = 0.1  # d_margin(k) = margin_rate * k * dt
    delta_s: float = 0.0
    veh_length: float = 5.0
    slack_penalty: float = 1e6
    virtual_gap_extra: float = 50.0
    powertrain: PowertrainParams = field(default_factory=PowertrainParams)
    solver: qp.QpSettings = field(default_factory=qp.QpSettings)

    def __post_init__(self):
        if not self.tau > self.tau_min or not self.d > self.d_min:
            raise ValueError("need tau > tau_min and d > d_min")
        if self.horizon < 1 or self.delay_steps < 0:
            raise ValueError("horizon must be positive and delay_steps nonnegative")

    @property
    def horizon_time(self) -> float:
        return self.horizon * self.dt

    def margin(self) -> np.ndarray:
        return self.margin_rate * np.arange(1, self.horizon + 1) * self.dt


def desired_headway(v, params: MpcParams):
    return params.d + params.tau * v


def min_headway(v, params: MpcParams):
    return params.d_min + params.tau_min * v


@dataclass
class MpcResult:
    a_desired: float
    accels: np.ndarray  # a(0..N-1+q | t), fixed part included
    s: np.ndarray  # planned positions, k = 0..N+q
    v: np.ndarray
    feasible: bool
    slack_used: bool
    max_slack: float
    status: qp.Status
    horizon: int

    @property
    def planned_s(self) -> np.ndarray:
        """Planned positions for k = 1..N."""
        return self.s[1 : self.horizon + 1]

    @property
    def planned_v(self) -> np.ndarray:
        return self.v[1 : self.horizon + 1]


def virtual_preceding(ego: VehicleState, params: MpcParams) -> VehicleState:
    """Stand-in leader far enough ahead that tracking drives toward v_max."""
    gap = params.d + params.tau * params.v_max + params.virtual_gap_extra
    return VehicleState(ego.s + params.veh_length + gap, params.v_max, ego.l)


def horizon_data(
    ego: VehicleState,
    fixed_accels: Sequence[float],
    scenarios,
    params: MpcParams,
    slack: bool = False,
) -> qp.HorizonData:
    pt = params.powertrain
    return qp.HorizonData(
        s0=ego.s,
        v0=ego.v,
        fixed_accels=np.asarray(fixed_accels, dtype=float),
        scenarios=scenarios,
        dt=params.dt,
        horizon=params.horizon,
        q_g=params.q_g,
        q_a=params.q_a,
        tau=params.tau,
        d=params.d,
        tau_min=params.tau_min,
        d_min=params.d_min,
        margin=params.margin(),
        v_max=params.v_max,
        u_min=pt.u_s_min,
        u_max=pt.u_s_max,
        m1=pt.m1,
        b1=pt.b1,
        m2=pt.m2,
        b2=pt.b2,
        veh_length=params.veh_length,
        slack_penalty=params.slack_penalty if slack else None,
    )


def scenarios_from(prediction, params: MpcParams):
    """``(s_pred, prob, enforce)`` triples from a single trajectory or a bundle.

    Roles outside the subset are dropped, the rest are renormalized, and safety
    rows are imposed for every role whose probability exceeds ``eta``.
    """
    if isinstance(prediction, PredictedTrajectory):
        return [(prediction.s, 1.0, True)]
    if isinstance(prediction, PredictionBundle):
        probs = prediction.conditioned()
        return [
            (prediction.fused[r].s, p, p > params.eta)
            for r, p in sorted(probs.items(), key=lambda kv: kv[0].value)
        ]
    raise TypeError(f"unsupported prediction type {type(prediction).__name__}")


def plan(
    ego: VehicleState,
    fixed_accels: Sequence[float],
    prediction,
    params: MpcParams,
) -> MpcResult:
    """Solve the condensed MPC; fall back to L1-penalized safety slack when the
    hard problem is infeasible."""
    fixed = np.asarray(fixed_accels, dtype=float)
    if fixed.size != params.delay_steps:
        raise ValueError(f"expected {params.delay_steps} fixed accelerations, got {fixed.size}")
    scenarios = scenarios_from(prediction, params)
    for s_pred, _, _ in scenarios:
        if len(s_pred) < params.horizon:
            raise ValueError("prediction shorter than the MPC horizon")

    data = horizon_data(ego, fixed, scenarios, params)
    cond = qp.condense_mpc(data)
    sol = qp.solve(cond.problem, params.solver)
    slack_used, max_slack = False, 0.0
    if not sol.solved:
        data = horizon_data(ego, fixed, scenarios, params, slack=True)
        cond = qp.condense_mpc(data)
        sol = qp.solve(cond.problem, params.solver)
        xi = sol.z[cond.n_accel:]
        max_slack = float(np.max(xi, initial=0.0))
        slack_used = max_slack > 1e-6
    z = sol.z[: cond.n_accel]
    s, v = qp.plan_states(data, z)
    return MpcResult(
        a_desired=float(z[0]),
        accels=np.concatenate([fixed, z]),
        s=s,
        v=v,
        feasible=sol.solved and not slack_used,
        slack_used=slack_used,
        max_slack=max_slack,
        status=sol.status,
        horizon=params.horizon,
    )


def with_delay(params: MpcParams, delay_steps: int) -> MpcParams:
    return replace(params, delay_steps=delay_steps)
