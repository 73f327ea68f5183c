"""Closed-loop four-vehicle cut-in scenario: construction, stepping, metrics
and Monte Carlo repetition."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import estimator as est
from .controllers import Controller, ControllerKind, ControllerSetup, OvmParams, ovm_accel
from .dynamics import (
    DelayBuffer,
    PowertrainParams,
    TrafficState,
    VehicleState,
    delay_steps,
    energy_rate,
    make_buffer,
    resistance,
    step_longitudinal,
)
from .game import Action, GameParams, Role, boxes_overlap, preceding_vehicle, solve_cutin_game
from .mpc import MpcParams, min_headway

EGO, CUTIN, SLOW_EGO_LANE, SLOW_LEFT_LANE = 0, 1, 2, 3


@dataclass(frozen=True)
class ScenarioConfig:
    lane_width: float = 4.0
    veh_length: float = 5.0
    veh_width: float = 2.5
    l_target: float = 0.0
    v_max: float = 30.0
    dt: float = 0.1
    t_final: float = 15.0
    delta_l: float = 1.0
    s0: float = 0.0
    h0: float = 95.0
    h1: float = 25.0
    s1: float = 30.0
    v_ego: float = 20.0
    v_others: float = 16.0
    cutin_present: bool = True
    role: Role = Role.LEADER
    noise_cov: Tuple[float, float, float] = (0.002, 0.001, 0.0002)
    controller: ControllerKind = ControllerKind.ECO_CUTIN_AWARE
    delay_aware: bool = True
    seed: int = 0
    repetition: int = 0
    repetitions: int = 1
    game_replan_period: float = 0.5
    powertrain: PowertrainParams = field(default_factory=PowertrainParams)
    mpc: MpcParams = field(default_factory=MpcParams)
    game: GameParams = field(default_factory=GameParams)
    ovm: OvmParams = field(default_factory=OvmParams)
    prior: est.RolePosterior = field(default_factory=est.RolePosterior)
    estimator_floor: float = est.DEFAULT_FLOOR
    sigma_rule: str = "crossing"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if abs(self.t_final / self.dt - round(self.t_final / self.dt)) > 1e-9:
            raise ValueError("t_final must be a multiple of dt")
        if len(self.noise_cov) != 3 or min(self.noise_cov) <= 0:
            raise ValueError("noise covariance diagonal must hold three positive entries")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        delay_steps(self.powertrain.iota, self.dt)
        r = self.game_replan_period / self.dt
        if abs(r - round(r)) > 1e-9 or round(r) < 1:
            raise ValueError("game replan period must be a positive multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def plant_delay(self) -> int:
        return delay_steps(self.powertrain.iota, self.dt)

    @property
    def replan_every(self) -> int:
        return int(round(self.game_replan_period / self.dt))

    def game_params(self) -> GameParams:
        return replace(
            self.game, v_max=self.v_max, veh_length=self.veh_length,
            veh_width=self.veh_width, lane_width=self.lane_width, l_target=self.l_target,
        )

    def mpc_params(self) -> MpcParams:
        q = self.plant_delay if self.delay_aware else 0
        return replace(
            self.mpc, dt=self.dt, delay_steps=q, v_max=self.v_max,
            veh_length=self.veh_length, powertrain=self.powertrain,
        )

    def ovm_params(self) -> OvmParams:
        return replace(self.ovm, v_max=self.v_max, veh_length=self.veh_length)

    def controller_setup(self) -> ControllerSetup:
        return ControllerSetup(
            mpc=self.mpc_params(),
            game=self.game_params(),
            ovm=self.ovm_params(),
            noise=est.NoiseModel(tuple(self.noise_cov)),
            prior=self.prior,
            floor=self.estimator_floor,
            cutin_idx=CUTIN if self.cutin_present else None,
            handoff_tol=self.delta_l,
            replan_every=self.replan_every,
            sim_dt=self.dt,
            sigma_rule=self.sigma_rule,
        )


PRESETS: Dict[str, Dict] = {
    "no_cutin": {"cutin_present": False},
    "behind_cutin": {"cutin_present": True, "s1": 0.0},
    "front_cutin": {"cutin_present": True, "s1": 30.0},
}


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown scenario {name!r} (expected one of {', '.join(PRESETS)})")
    return ScenarioConfig(**{**PRESETS[name], **overrides})


def build_scenario(config: ScenarioConfig) -> TrafficState:
    c = config
    vehicles = {
        EGO: VehicleState(c.s0, c.v_ego, c.l_target),
        SLOW_EGO_LANE: VehicleState(c.s0 + c.h0 + c.veh_length, c.v_others, c.l_target),
    }
    if c.cutin_present:
        left = c.l_target + c.lane_width
        vehicles[CUTIN] = VehicleState(c.s1, c.v_others, left)
        vehicles[SLOW_LEFT_LANE] = VehicleState(c.s1 + c.h1 + c.veh_length, c.v_others, left)
    return TrafficState(vehicles, 0)


def check_collision(traffic: TrafficState, veh_length: float, veh_width: float) -> bool:
    idx = traffic.indices()
    for n, i in enumerate(idx):
        for j in idx[n + 1:]:
            a, b = traffic[i], traffic[j]
            if boxes_overlap(a.s, a.l, b.s, b.l, veh_length, veh_width):
                return True
    return False


def cutin_following_step(
    traffic: TrafficState, config: ScenarioConfig
) -> VehicleState:
    """Post-handoff cut-in motion: OVM car following in the target lane with the
    residual lateral offset removed at half a lane per second."""
    me = traffic[CUTIN]
    lead_idx = preceding_vehicle(CUTIN, traffic, config.veh_length, config.veh_width)
    lead = traffic[lead_idx] if lead_idx is not None else None
    pt = config.powertrain
    a = min(max(ovm_accel(me, lead, config.ovm_params()), pt.u_s_min), pt.u_s_max)
    dt = config.dt
    rate = config.lane_width / 2.0
    dl = config.l_target - me.l
    v_l = math.copysign(min(abs(dl) / dt, rate), dl) if dl else 0.0
    return VehicleState(me.s + me.v * dt + 0.5 * a * dt * dt, me.v + a * dt, me.l + v_l * dt)


def step_world(
    traffic: TrafficState,
    buffer: DelayBuffer,
    ego_command: float,
    cutin_action: Optional[Action],
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> Tuple[TrafficState, DelayBuffer, float]:
    """Advance every vehicle by one step.

    ``cutin_action=None`` means the cut-in has been handed off to car following.
    Returns the new traffic, the ego's delay buffer and its realized acceleration.
    """
    dt = config.dt
    ego, buffer, a_ego = step_longitudinal(traffic[EGO], buffer, ego_command, config.powertrain, dt)
    new = {EGO: ego}
    # noise drawn every step so realizations stay aligned across controllers
    w = rng.normal(size=3) * np.sqrt(np.asarray(config.noise_cov))
    for i in traffic.indices():
        if i == EGO:
            continue
        st = traffic[i]
        if i == CUTIN:
            if cutin_action is None:
                nxt = cutin_following_step(traffic, config)
            else:
                nxt = est.apply_action(st, cutin_action, config.game_params(), dt)
            v = min(max(nxt.v + w[1], 0.0), config.v_max)
            new[i] = VehicleState(nxt.s + w[0], v, nxt.l + w[2])
        else:
            new[i] = VehicleState(st.s + st.v * dt, st.v, st.l)
    return TrafficState(new, traffic.step + 1), buffer, a_ego


@dataclass(frozen=True)
class StepTrace:
    t: float
    states: Dict[int, VehicleState]
    a_realized: float
    a_desired: float
    headway: float  # to the current preceding vehicle; nan if none
    p_leader: float  # nan when no estimation is running
    sigma: Tuple[str, ...]
    energy: float  # cumulative through the end of this step
    feasible: bool
    slack_used: bool


@dataclass(frozen=True)
class RunSummary:
    energy: float
    collision: bool
    min_headway_margin: float
    slack_activations: int
    wall_time: float
    failed: bool = False
    error: str = ""
    cutin_merged_ahead: Optional[bool] = None


def _headway(traffic: TrafficState, config: ScenarioConfig) -> Tuple[Optional[int], float]:
    idx = preceding_vehicle(EGO, traffic, config.veh_length, config.veh_width)
    if idx is None:
        return None, math.nan
    return idx, traffic[idx].s - traffic[EGO].s - config.veh_length


def run_episode(config: ScenarioConfig) -> Tuple[List[StepTrace], RunSummary]:
    start = time.perf_counter()
    rng = np.random.default_rng([config.seed, config.repetition])
    traffic = build_scenario(config)
    # cruising history: commands that held the initial speed
    buffer = make_buffer(config.plant_delay, float(resistance(traffic[EGO].v, config.powertrain)))
    controller = Controller(config.controller, config.controller_setup())
    gparams = config.game_params()
    mparams = config.mpc_params()

    traces: List[StepTrace] = []
    energy = 0.0
    min_margin = math.inf
    slack_count = 0
    collision = failed = False
    error = ""
    handed_off = not config.cutin_present
    held: Optional[Action] = None

    for k in range(config.n_steps):
        if not handed_off and k % config.replan_every == 0:
            sol = solve_cutin_game(traffic, gparams, CUTIN, EGO)
            held = Action(int(sol.sequences[config.role][0]))
        try:
            info = controller.step(traffic)
        except Exception as exc:  # recorded, not raised
            failed, error = True, f"{type(exc).__name__}: {exc}"
            break
        v_now = traffic[EGO].v
        _, h = _headway(traffic, config)
        if not math.isnan(h):
            min_margin = min(min_margin, h - float(min_headway(v_now, mparams)))
        nxt, buffer, a_real = step_world(
            traffic, buffer, info.a_desired, None if handed_off else held, config, rng
        )
        energy += float(energy_rate(v_now, a_real, config.powertrain)) * config.dt
        slack_count += int(info.slack_used)
        p_leader = info.posterior.p_leader if info.posterior is not None else math.nan
        traces.append(StepTrace(
            t=k * config.dt,
            states=dict(traffic.vehicles),
            a_realized=a_real,
            a_desired=info.a_desired,
            headway=h,
            p_leader=p_leader,
            sigma=tuple(sorted(r.value for r in info.sigma)),
            energy=energy,
            feasible=info.feasible,
            slack_used=info.slack_used,
        ))
        traffic = nxt
        if check_collision(traffic, config.veh_length, config.veh_width):
            collision = True
            break
        if not handed_off and abs(traffic[CUTIN].l - config.l_target) < config.delta_l:
            handed_off = True

    merged_ahead = None
    if config.cutin_present and handed_off:
        merged_ahead = bool(traffic[CUTIN].s > traffic[EGO].s)
    summary = RunSummary(
        energy=energy,
        collision=collision,
        min_headway_margin=min_margin,
        slack_activations=slack_count,
        wall_time=time.perf_counter() - start,
        failed=failed,
        error=error,
        cutin_merged_ahead=merged_ahead,
    )
    return traces, summary


def episode_configs(base: ScenarioConfig) -> List[ScenarioConfig]:
    """One config per repetition, sharing the global seed."""
    return [replace(base, repetition=r) for r in range(base.repetitions)]


def run_many(
    configs: Sequence[ScenarioConfig], jobs: int = 1
) -> List[Tuple[List[StepTrace], RunSummary]]:
    """Run independent episodes, in worker processes when ``jobs > 1``; result
    order matches ``configs``."""
    if jobs <= 1 or len(configs) <= 1:
        return [run_episode(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_episode, configs))
