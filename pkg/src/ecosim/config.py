"""YAML scenario files.

Schema (every section and key optional; unknown keys are errors)::

    scenario: front_cutin          # preset: no_cutin | behind_cutin | front_cutin
    traffic:    {lane_width, veh_length, veh_width, l_target, v_max, dt, t_final,
                 delta_l, s0, h0, h1, s1, v_ego, v_others, noise_cov, cutin_present}
    game:       {weights, discount, horizon, dt, tau_desired, a_mild, a_hard,
                 v_min, collision_substeps}
    mpc:        {horizon, q_g, q_a, tau, d, tau_min, d_min, eta, margin_rate,
                 delta_s, slack_penalty, virtual_gap_extra}
    ovm:        {alpha, beta, d, tau}
    powertrain: {u_s_min, u_s_max, m1, b1, m2, b2, iota, rho_c0, rho_c2}
    estimator:  {prior_leader, floor}
    prediction: {sigma_rule}
    run:        {controller, role, seed, repetitions, delay_aware, game_replan_period}
"""
from __future__ import annotations

from dataclasses import replace
from typing import Any, Dict, Optional, Tuple

import yaml

from . import estimator as est
from .controllers import ControllerKind
from .game import Role
from .prediction import SIGMA_RULES
from .sim import PRESETS, ScenarioConfig


class ConfigError(ValueError):
    """Invalid configuration, with file/line context when available."""


_FLOAT, _INT, _BOOL, _STR = "float", "int", "bool", "str"

SCHEMA: Dict[str, Dict[str, Any]] = {
    "traffic": {
        "lane_width": _FLOAT, "veh_length": _FLOAT, "veh_width": _FLOAT,
        "l_target": _FLOAT, "v_max": _FLOAT, "dt": _FLOAT, "t_final": _FLOAT,
        "delta_l": _FLOAT, "s0": _FLOAT, "h0": _FLOAT, "h1": _FLOAT, "s1": _FLOAT,
        "v_ego": _FLOAT, "v_others": _FLOAT, "noise_cov": (_FLOAT, 3),
        "cutin_present": _BOOL,
    },
    "game": {
        "weights": (_FLOAT, 6), "discount": _FLOAT, "horizon": _INT, "dt": _FLOAT,
        "tau_desired": _FLOAT, "a_mild": _FLOAT, "a_hard": _FLOAT, "v_min": _FLOAT,
        "collision_substeps": _INT,
    },
    "mpc": {
        "horizon": _INT, "q_g": _FLOAT, "q_a": _FLOAT, "tau": _FLOAT, "d": _FLOAT,
        "tau_min": _FLOAT, "d_min": _FLOAT, "eta": _FLOAT, "margin_rate": _FLOAT,
        "delta_s": _FLOAT, "slack_penalty": _FLOAT, "virtual_gap_extra": _FLOAT,
    },
    "ovm": {"alpha": _FLOAT, "beta": _FLOAT, "d": _FLOAT, "tau": _FLOAT},
    "powertrain": {
        "u_s_min": _FLOAT, "u_s_max": _FLOAT, "m1": _FLOAT, "b1": _FLOAT,
        "m2": _FLOAT, "b2": _FLOAT, "iota": _FLOAT, "rho_c0": _FLOAT, "rho_c2": _FLOAT,
    },
    "estimator": {"prior_leader": _FLOAT, "floor": _FLOAT},
    "prediction": {"sigma_rule": _STR},
    "run": {
        "controller": _STR, "role": _STR, "seed": _INT, "repetitions": _INT,
        "delay_aware": _BOOL, "game_replan_period": _FLOAT,
    },
}


def _where(source: str, node: yaml.Node) -> str:
    return f"{source}:{node.start_mark.line + 1}"


def _scalar(node: yaml.Node, kind: str, source: str, key: str):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{_where(source, node)}: '{key}' must be a {kind}")
    value = yaml.safe_load(node.value) if node.style is None else node.value
    if kind == _FLOAT and isinstance(value, str):
        # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
        try:
            value = float(value)
        except ValueError:
            pass
    ok = {
        _FLOAT: isinstance(value, (int, float)) and not isinstance(value, bool),
        _INT: isinstance(value, int) and not isinstance(value, bool),
        _BOOL: isinstance(value, bool),
        _STR: isinstance(value, str),
    }[kind]
    if not ok:
        raise ConfigError(f"{_where(source, node)}: '{key}' must be a {kind}, got {node.value!r}")
    return float(value) if kind == _FLOAT else value


def _value(node: yaml.Node, spec, source: str, key: str):
    if isinstance(spec, tuple):
        kind, length = spec
        if not isinstance(node, yaml.SequenceNode) or len(node.value) != length:
            raise ConfigError(f"{_where(source, node)}: '{key}' must be a list of {length} numbers")
        return tuple(_scalar(n, kind, source, key) for n in node.value)
    return _scalar(node, spec, source, key)


def parse_config(text: str, source: str = "<config>") -> Dict[str, Dict[str, Any]]:
    """Validate YAML text against :data:`SCHEMA`; returns ``{section: {key: value}}``
    plus the optional top-level ``scenario`` entry."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{line}: {getattr(exc, 'problem', None) or exc}") from None
    out: Dict[str, Dict[str, Any]] = {}
    if root is None:
        return out
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{_where(source, root)}: top level must be a mapping")
    for knode, vnode in root.value:
        section = knode.value
        if section == "scenario":
            name = _scalar(vnode, _STR, source, "scenario")
            if name not in PRESETS:
                raise ConfigError(
                    f"{_where(source, vnode)}: unknown scenario {name!r} "
                    f"(expected one of {', '.join(PRESETS)})"
                )
            out["scenario"] = name
            continue
        if section not in SCHEMA:
            raise ConfigError(f"{_where(source, knode)}: unknown section '{section}'")
        if not isinstance(vnode, yaml.MappingNode):
            raise ConfigError(f"{_where(source, vnode)}: section '{section}' must be a mapping")
        entries = out.setdefault(section, {})
        for k, v in vnode.value:
            if k.value not in SCHEMA[section]:
                raise ConfigError(f"{_where(source, k)}: unknown key '{k.value}' in section '{section}'")
            entries[k.value] = _value(v, SCHEMA[section][k.value], source, f"{section}.{k.value}")
    return out


def build_config(parsed: Dict[str, Any], scenario: Optional[str] = None) -> ScenarioConfig:
    """ScenarioConfig from parsed sections; ``scenario`` overrides the file's preset."""
    try:
        return _build(parsed, scenario)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _build(parsed: Dict[str, Any], scenario: Optional[str]) -> ScenarioConfig:
    name = scenario or parsed.get("scenario") or "front_cutin"
    base = ScenarioConfig(**PRESETS[name])
    traffic = dict(parsed.get("traffic", {}))
    run = dict(parsed.get("run", {}))
    kw: Dict[str, Any] = dict(traffic)
    if "controller" in run:
        kw["controller"] = ControllerKind.parse(run.pop("controller"))
    if "role" in run:
        kw["role"] = parse_role(run.pop("role"))
    kw.update(run)
    if "game" in parsed:
        kw["game"] = replace(base.game, **parsed["game"])
    if "mpc" in parsed:
        kw["mpc"] = replace(base.mpc, **parsed["mpc"])
    if "ovm" in parsed:
        kw["ovm"] = replace(base.ovm, **parsed["ovm"])
    if "powertrain" in parsed:
        kw["powertrain"] = replace(base.powertrain, **parsed["powertrain"])
    estimator = parsed.get("estimator", {})
    if "prior_leader" in estimator:
        p = estimator["prior_leader"]
        kw["prior"] = est.RolePosterior(p, 1.0 - p)
    if "floor" in estimator:
        kw["estimator_floor"] = estimator["floor"]
    rule = parsed.get("prediction", {}).get("sigma_rule")
    if rule is not None:
        if rule not in SIGMA_RULES:
            raise ConfigError(f"prediction.sigma_rule must be one of {', '.join(SIGMA_RULES)}")
        kw["sigma_rule"] = rule
    return replace(base, **kw)


def parse_role(name: str) -> Role:
    try:
        return Role(name)
    except ValueError:
        raise ValueError(f"unknown role {name!r} (expected leader or follower)") from None


def load_config(path: str, scenario: Optional[str] = None) -> Tuple[ScenarioConfig, Dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        parsed = parse_config(fh.read(), path)
    return build_config(parsed, scenario), parsed
