"""Batch front end: ``ecosim run`` executes episodes and writes traces plus a
summary; ``ecosim compare`` reports energy reductions between summaries."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import ConfigError, build_config, load_config, parse_role
from .controllers import ControllerKind
from .dynamics import energy_rate
from .game import Role
from .sim import CUTIN, EGO, PRESETS, RunSummary, ScenarioConfig, StepTrace, episode_configs, run_many

TRACE_COLUMNS = (
    "t", "s0", "v0", "l0", "a0_realized", "a0_desired", "h0",
    "s1", "v1", "l1", "p_leader", "sigma_set", "energy", "feasible",
)
NO_ROLE = "none"
JOBS_ENV = "ECOSIM_JOBS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# -- formatting ---------------------------------------------------------------


def fmt(x: float) -> str:
    """Shortest text that parses back to the same double."""
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def trace_rows(traces: Sequence[StepTrace]) -> List[List[str]]:
    nan = math.nan
    rows = []
    for tr in traces:
        ego = tr.states[EGO]
        cut = tr.states.get(CUTIN)
        c = (cut.s, cut.v, cut.l) if cut is not None else (nan, nan, nan)
        rows.append([
            fmt(tr.t), fmt(ego.s), fmt(ego.v), fmt(ego.l),
            fmt(tr.a_realized), fmt(tr.a_desired), fmt(tr.headway),
            fmt(c[0]), fmt(c[1]), fmt(c[2]), fmt(tr.p_leader),
            "|".join(tr.sigma), fmt(tr.energy), str(int(tr.feasible)),
        ])
    return rows


def trace_csv(traces: Sequence[StepTrace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    w.writerows(trace_rows(traces))
    return buf.getvalue()


def read_trace(path: str) -> Dict[str, np.ndarray]:
    """Numeric trace columns as arrays; ``sigma_set`` stays a list of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out: Dict[str, object] = {}
    for col in TRACE_COLUMNS:
        vals = [r[col] for r in rows]
        out[col] = vals if col == "sigma_set" else np.array([float(v) for v in vals])
    return out


def trace_energy(trace: Dict[str, np.ndarray], config: ScenarioConfig) -> float:
    """Energy recomputed from the ego speed and realized acceleration columns."""
    total = 0.0
    for v, a in zip(trace["v0"], trace["a0_realized"]):
        total += float(energy_rate(v, a, config.powertrain)) * config.dt
    return total


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- summaries ----------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    config: ScenarioConfig
    traces: List[StepTrace]
    summary: RunSummary

    @property
    def role_name(self) -> str:
        return self.config.role.value if self.config.cutin_present else NO_ROLE

    @property
    def key(self) -> str:
        return f"{self.config.controller.value}/{self.role_name}"

    @property
    def trace_name(self) -> str:
        return f"{self.config.controller.value}_{self.role_name}_rep{self.config.repetition:03d}.csv"


def _finite(x: float) -> Optional[float]:
    return float(x) if math.isfinite(x) else None


def summarize(episodes: Iterable[Episode]) -> Dict[str, Dict]:
    """Per controller/role statistics; failed episodes are counted but excluded
    from the energy statistics."""
    groups: Dict[str, List[Episode]] = {}
    for ep in episodes:
        groups.setdefault(ep.key, []).append(ep)
    out = {}
    for key, eps in groups.items():
        ok = [e for e in eps if not e.summary.failed]
        w = np.array([e.summary.energy for e in ok])
        margin = min((e.summary.min_headway_margin for e in ok), default=math.inf)
        out[key] = {
            "n": len(ok),
            "mean": float(w.mean()) if len(w) else None,
            "std": float(w.std(ddof=1)) if len(w) > 1 else None,
            "energies": [float(x) for x in w],
            "collisions": sum(int(e.summary.collision) for e in ok),
            "min_headway_margin": _finite(margin),
            "slack_activations": sum(e.summary.slack_activations for e in ok),
            "failed": len(eps) - len(ok),
            "errors": sorted({e.summary.error for e in eps if e.summary.failed}),
        }
    return out


def summary_json(summary: Dict[str, Dict]) -> str:
    return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def _num(x: Optional[float], spec: str) -> str:
    if x is None:
        return format("-", ">" + spec.split(".")[0])
    return format(x, spec)


def summary_table(summary: Dict[str, Dict]) -> str:
    head = f"{'controller':<10} {'role':<9} {'energy':>9} {'std':>8} {'coll':>5} {'min margin':>11} {'n':>4} {'failed':>6}"
    lines = [head, "-" * len(head)]
    for key in sorted(summary):
        ctrl, role = key.split("/")
        r = summary[key]
        lines.append(
            f"{ctrl:<10} {role:<9} {_num(r['mean'], '9.2f')} {_num(r['std'], '8.2f')} "
            f"{r['collisions']:>5} {_num(r['min_headway_margin'], '11.2f')} {r['n']:>4} {r['failed']:>6}"
        )
    return "\n".join(lines)


# -- compare ------------------------------------------------------------------


def percent_reduction(base: float, new: float) -> float:
    if base == 0:
        raise ValueError("baseline energy is zero")
    return (base - new) / base * 100.0


def compare_summaries(base: Dict[str, Dict], new: Dict[str, Dict]) -> Dict[str, Tuple[float, float, float]]:
    """``{key: (w_base, w_new, percent reduction)}``; keys must match exactly."""
    if set(base) != set(new):
        missing = sorted(set(base) ^ set(new))
        raise ValueError(f"summary keys differ: {', '.join(missing)}")
    out = {}
    for key in sorted(base):
        wb, wn = base[key]["mean"], new[key]["mean"]
        if wb is None or wn is None:
            raise ValueError(f"no successful episodes for {key}")
        out[key] = (wb, wn, percent_reduction(wb, wn))
    return out


def compare_controllers(summary: Dict[str, Dict], base: str, new: str) -> Dict[str, Tuple[float, float, float]]:
    """Same comparison between two controllers inside one summary, per role."""
    def pick(ctrl):
        return {k.split("/", 1)[1]: v for k, v in summary.items() if k.split("/", 1)[0] == ctrl}
    b, n = pick(base), pick(new)
    if not b or not n:
        raise ValueError(f"summary lacks controller {base if not b else new!r}")
    return compare_summaries(b, n)


def comparison_table(rows: Dict[str, Tuple[float, float, float]]) -> str:
    head = f"{'key':<22} {'base':>9} {'new':>9} {'delta':>9} {'reduction %':>12}"
    lines = [head, "-" * len(head)]
    for key, (wb, wn, pct) in rows.items():
        lines.append(f"{key:<22} {wb:9.2f} {wn:9.2f} {wn - wb:9.2f} {pct:12.1f}")
    return "\n".join(lines)


# -- argument handling --------------------------------------------------------


def _jobs_default() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(f"{JOBS_ENV} must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise ConfigError(f"{JOBS_ENV} must be at least 1")
    return jobs


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ecosim", description="Eco-driving cut-in simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run episodes and write traces and a summary")
    r.add_argument("--config", help="YAML scenario file")
    r.add_argument("--scenario", choices=sorted(PRESETS), help="scenario preset")
    r.add_argument("--controller", help="ovm, eco, eco-cutin or all")
    r.add_argument("--roles", "--role", dest="roles", help="leader, follower or both")
    r.add_argument("--s1", type=float, help="initial cut-in position [m]")
    r.add_argument("--reps", type=int, help="repetitions per controller and role")
    r.add_argument("--seed", type=int, help="global seed")
    r.add_argument("--delay", type=float, help="actuation delay [s]")
    r.add_argument("--delay-unaware", action="store_true", help="plan as if there were no delay")
    r.add_argument("--out", default="ecosim_out", help="output directory")
    r.add_argument("--traces", action=argparse.BooleanOptionalAction, default=True,
                   help="write one CSV trace per episode")
    r.add_argument("--jobs", type=int, help=f"worker processes (default ${JOBS_ENV} or 1)")
    r.add_argument("--quiet", action="store_true", help="do not print the summary table")

    c = sub.add_parser("compare", help="percent energy reductions between summaries")
    c.add_argument("summaries", nargs="+", help="summary.json files; the first is the baseline")
    c.add_argument("--base", help="baseline controller (single-summary mode)")
    c.add_argument("--new", help="compared controller (single-summary mode)")
    return p


def _controllers(arg: Optional[str], parsed: Dict, cfg: ScenarioConfig) -> List[ControllerKind]:
    if arg is None:
        return [cfg.controller] if "controller" in parsed.get("run", {}) else list(ControllerKind)
    if arg == "all":
        return list(ControllerKind)
    return [ControllerKind.parse(arg)]


def _roles(arg: Optional[str], parsed: Dict, cfg: ScenarioConfig) -> List[Role]:
    if not cfg.cutin_present:
        return [cfg.role]
    if arg is None:
        return [cfg.role] if "role" in parsed.get("run", {}) else list(Role)
    if arg == "both":
        return list(Role)
    return [parse_role(arg)]


def plan_run(args: argparse.Namespace) -> List[ScenarioConfig]:
    """Episode configs for a ``run`` request; raises ConfigError on bad input."""
    try:
        if args.config:
            cfg, parsed = load_config(args.config, args.scenario)
        else:
            parsed = {}
            cfg = build_config({}, args.scenario)
        kw = {}
        if args.s1 is not None:
            kw["s1"] = args.s1
        if args.seed is not None:
            kw["seed"] = args.seed
        if args.reps is not None:
            kw["repetitions"] = args.reps
        if args.delay is not None:
            kw["powertrain"] = replace(cfg.powertrain, iota=args.delay)
        if args.delay_unaware:
            kw["delay_aware"] = False
        cfg = replace(cfg, **kw)
        kinds = _controllers(args.controller, parsed, cfg)
        roles = _roles(args.roles, parsed, cfg)
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    configs = []
    for kind in kinds:
        for role in roles:
            configs.extend(episode_configs(replace(cfg, controller=kind, role=role)))
    return configs


def cmd_run(args: argparse.Namespace) -> int:
    configs = plan_run(args)
    jobs = args.jobs if args.jobs is not None else _jobs_default()
    if jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    try:
        os.makedirs(args.out, exist_ok=True)
        trace_dir = os.path.join(args.out, "traces")
        if args.traces:
            os.makedirs(trace_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc}") from None

    results = run_many(configs, jobs)
    episodes = [Episode(c, tr, s) for c, (tr, s) in zip(configs, results)]
    if args.traces:
        for ep in episodes:
            atomic_write(os.path.join(trace_dir, ep.trace_name), trace_csv(ep.traces))
    summary = summarize(episodes)
    atomic_write(os.path.join(args.out, "summary.json"), summary_json(summary))
    if not args.quiet:
        print(summary_table(summary))
    failed = [ep for ep in episodes if ep.summary.failed]
    for ep in failed:
        print(f"failed: {ep.trace_name}: {ep.summary.error}", file=sys.stderr)
    return 2 if failed else 0


def _load_summary(path: str) -> Dict[str, Dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def cmd_compare(args: argparse.Namespace) -> int:
    summaries = [_load_summary(p) for p in args.summaries]
    try:
        if args.base or args.new:
            if not (args.base and args.new) or len(summaries) != 1:
                raise ConfigError("--base and --new take exactly one summary file")
            print(comparison_table(compare_controllers(summaries[0], args.base, args.new)))
            return 0
        if len(summaries) < 2:
            raise ConfigError("compare needs at least two summary files")
        for path, other in zip(args.summaries[1:], summaries[1:]):
            print(f"{args.summaries[0]} -> {path}")
            print(comparison_table(compare_summaries(summaries[0], other)))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "run":
            return cmd_run(args)
        return cmd_compare(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
