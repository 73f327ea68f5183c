"""Eco-driving under cut-in: game-theoretic cut-in agent, Bayesian role
estimation, prediction fusion and a delay-aware MPC, plus two baselines."""
from .controllers import Controller, ControllerKind, ControllerSetup, OvmParams, ovm_accel
from .dynamics import PowertrainParams, TrafficState, VehicleState
from .estimator import RolePosterior
from .game import Action, GameParams, Role, solve_cutin_game
from .mpc import MpcParams, plan
from .sim import PRESETS, RunSummary, ScenarioConfig, StepTrace, preset, run_episode, run_many

__all__ = [
    "Action", "Controller", "ControllerKind", "ControllerSetup", "GameParams", "MpcParams",
    "OvmParams", "PRESETS", "PowertrainParams", "Role", "RolePosterior", "RunSummary",
    "ScenarioConfig", "StepTrace", "TrafficState", "VehicleState", "ovm_accel", "plan",
    "preset", "run_episode", "run_many", "solve_cutin_game",
]

__version__ = "0.1.0"
