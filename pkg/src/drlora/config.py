"""Run configuration: a single YAML file, validated, with per-environment defaults.

Defaults for the knapsack and navigation environments follow the
hyper-parameter tables of the original experiments; an empty file gives a
small chain-environment smoke run.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from .agents import Adaptation, AgentConfig

SCHEMA_VERSION = 1
OUT_ROOT_ENV = "DRLORA_OUT"


class ConfigError(ValueError):
    pass


ENV_DEFAULTS: dict[str, dict[str, Any]] = {
    "chain": {"length": 5, "reward": 1.0, "max_steps": 50},
    "knapsack": {"num_items": 20, "capacity_fraction": 0.4, "weight_range": [1, 10],
                 "value_range": [1, 10], "instance_seed": 0},
    "gridnav": {"width": 10, "height": 10, "density": 2, "obstacle_scale": 3, "step_penalty": 1.0,
                "collision_penalty": 5.0, "goal_bonus": 100.0, "max_steps": 200, "instance_seed": None},
}

AGENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "chain": {"gamma": 0.9, "lr": 0.1, "ensemble_size": 4, "epsilon_greedy": 0.1},
    "knapsack": {"lr": 1e-3, "batch_size": 32, "replay_capacity": 4096, "gamma": 1.0,
                 "epsilon_greedy": 0.1, "ensemble_size": 10},
    "gridnav": {"lr": 2e-4, "replay_capacity": 60000, "gamma": 0.99, "distortion_samples": 64,
                "batch_size": 32, "num_quantiles": 16, "alpha_min": 0.1, "ewaf_eta": 0.5,
                "ensemble_size": 10},
}

RUN_DEFAULTS: dict[str, dict[str, Any]] = {
    "chain": {"episodes": 10},
    "knapsack": {"episodes": 50000},
    "gridnav": {"episodes": 1000},
}


@dataclass
class EnvConfig:
    kind: str = "chain"
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


@dataclass
class RunConfig:
    env: EnvConfig
    agent: AgentConfig
    episodes: int = 10
    seeds: list = field(default_factory=lambda: [0])
    out_dir: Optional[str] = None
    name: Optional[str] = None
    eval_episodes: int = 100
    final_window: float = 0.1
    log_every: int = 0
    log_timing: bool = False
    workers: int = 1
    schema_version: int = SCHEMA_VERSION

    @property
    def label(self) -> str:
        return self.name or self.agent.label

    def output_dir(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        root = os.environ.get(OUT_ROOT_ENV, "runs")
        return Path(root) / f"{self.env.kind}-{self.label}"

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "episodes": self.episodes,
            "seeds": list(self.seeds),
            "eval_episodes": self.eval_episodes,
            "final_window": self.final_window,
            "log_every": self.log_every,
            "log_timing": self.log_timing,
            "env": self.env.to_dict(),
            "agent": self.agent.to_dict(),
        }


_RUN_KEYS = {"schema_version", "name", "episodes", "seeds", "out_dir", "eval_episodes",
             "final_window", "log_every", "log_timing", "workers", "env", "agent"}


def _bounded(name: str, value, lo=None, hi=None, lo_open=False, hi_open=False, kind=float):
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {kind.__name__}, got {value!r}") from None
    if lo is not None and (value < lo or (lo_open and value == lo)):
        raise ConfigError(f"{name}={value} out of range: must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (value > hi or (hi_open and value == hi)):
        raise ConfigError(f"{name}={value} out of range: must be {'<' if hi_open else '<='} {hi}")
    return value


def _agent_config(raw: Mapping[str, Any]) -> AgentConfig:
    known = {f.name for f in fields(AgentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"agent: unknown field(s) {', '.join(unknown)}")
    try:
        adaptation = Adaptation(raw.get("adaptation", "ftpl"))
    except ValueError:
        raise ConfigError(
            f"agent.adaptation: {raw.get('adaptation')!r} not one of {[a.value for a in Adaptation]}"
        ) from None
    v = dict(raw)
    v["adaptation"] = adaptation
    v["gamma"] = _bounded("agent.gamma", v.get("gamma", 0.99), 0, 1, lo_open=True)
    v["epsilon_greedy"] = _bounded("agent.epsilon_greedy", v.get("epsilon_greedy", 0.1), 0, 1)
    v["ensemble_size"] = _bounded("agent.ensemble_size", v.get("ensemble_size", 10), 1, kind=int)
    v["num_quantiles"] = _bounded("agent.num_quantiles", v.get("num_quantiles", 8), 1, kind=int)
    if v.get("distortion_samples") is not None:
        v["distortion_samples"] = _bounded("agent.distortion_samples", v["distortion_samples"], 1, kind=int)
    v["kappa"] = _bounded("agent.kappa", v.get("kappa", 1.0), 0, lo_open=True)
    v["lr"] = _bounded("agent.lr", v.get("lr", 0.1), 0, lo_open=True)
    v["alpha_min"] = _bounded("agent.alpha_min", v.get("alpha_min", 0.1), 0, 1, lo_open=True)
    v["alpha_max"] = _bounded("agent.alpha_max", v.get("alpha_max", 1.0), v["alpha_min"], 1)
    v["alpha_fixed"] = _bounded("agent.alpha_fixed", v.get("alpha_fixed", 1.0), 0, 1, lo_open=True)
    for key in ("eta_ftpl", "grid_epsilon"):
        if v.get(key) is not None:
            v[key] = _bounded(f"agent.{key}", v[key], 0, lo_open=True)
    v["ewaf_eta"] = _bounded("agent.ewaf_eta", v.get("ewaf_eta", 0.5), 0, lo_open=True)
    v["p_mask"] = _bounded("agent.p_mask", v.get("p_mask", 0.5), 0, 1, lo_open=True)
    v["replay_capacity"] = _bounded("agent.replay_capacity", v.get("replay_capacity", 0), 0, kind=int)
    v["batch_size"] = _bounded("agent.batch_size", v.get("batch_size", 32), 1, kind=int)
    if v.get("risk_family", "cvar") not in ("cvar", "quantile"):
        raise ConfigError(f"agent.risk_family: {v['risk_family']!r} not one of ['cvar', 'quantile']")
    if "waypoints" in v:
        wps = v["waypoints"]
        if not wps:
            raise ConfigError("agent.waypoints: at least one (episode, alpha) pair required")
        try:
            v["waypoints"] = tuple((float(e), float(a)) for e, a in wps)
        except (TypeError, ValueError):
            raise ConfigError("agent.waypoints: expected a list of [episode, alpha] pairs") from None
        if any(b[0] < a[0] for a, b in zip(v["waypoints"], v["waypoints"][1:])):
            raise ConfigError("agent.waypoints: must be sorted by episode")
        for _, a in v["waypoints"]:
            _bounded("agent.waypoints alpha", a, 0, 1, lo_open=True)
    if v.get("arms") is not None:
        v["arms"] = tuple(_bounded("agent.arms", a, 0, 1, lo_open=True) for a in v["arms"])
        if not v["arms"]:
            raise ConfigError("agent.arms: at least one arm required")
    return AgentConfig(**v)


def _env_config(raw: Mapping[str, Any]) -> EnvConfig:
    raw = dict(raw)
    kind = raw.pop("kind", "chain")
    if kind not in ENV_DEFAULTS:
        raise ConfigError(f"env.kind: {kind!r} not one of {sorted(ENV_DEFAULTS)}")
    unknown = sorted(set(raw) - set(ENV_DEFAULTS[kind]))
    if unknown:
        raise ConfigError(f"env: unknown field(s) {', '.join(unknown)} for kind {kind!r}")
    params = {**ENV_DEFAULTS[kind], **raw}
    ints = {"length", "max_steps", "num_items", "width", "height", "density", "obstacle_scale"}
    for key in ints & set(params):
        params[key] = _bounded(f"env.{key}", params[key], 0 if key == "density" else 1, kind=int)
    if kind == "knapsack":
        params["capacity_fraction"] = _bounded("env.capacity_fraction", params["capacity_fraction"], 0, 1,
                                               lo_open=True)
    if kind == "gridnav":
        cells = params["width"] * params["height"] - 2
        if params["density"] * params["obstacle_scale"] > cells:
            raise ConfigError(f"env.density: {params['density']} x obstacle_scale exceeds {cells} free cells")
    return EnvConfig(kind, params)


def config_from_dict(raw: Optional[Mapping[str, Any]]) -> RunConfig:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - _RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {', '.join(unknown)}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported {version!r} (expected {SCHEMA_VERSION})")
    env = _env_config(raw.get("env") or {})
    agent = _agent_config({**AGENT_DEFAULTS[env.kind], **(raw.get("agent") or {})})
    run = {**RUN_DEFAULTS[env.kind], **raw}
    seeds = run.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not seeds:
        raise ConfigError("seeds: at least one seed required")
    try:
        seeds = [int(s) for s in seeds]
    except (TypeError, ValueError):
        raise ConfigError(f"seeds: expected integers, got {seeds!r}") from None
    return RunConfig(
        env=env,
        agent=agent,
        episodes=_bounded("episodes", run["episodes"], 1, kind=int),
        seeds=seeds,
        out_dir=run.get("out_dir"),
        name=run.get("name"),
        eval_episodes=_bounded("eval_episodes", run.get("eval_episodes", 100), 0, kind=int),
        final_window=_bounded("final_window", run.get("final_window", 0.1), 0, 1, lo_open=True),
        log_every=_bounded("log_every", run.get("log_every", 0), 0, kind=int),
        log_timing=bool(run.get("log_timing", False)),
        workers=_bounded("workers", run.get("workers", 1), 1, kind=int),
        schema_version=version,
    )


def load_config(source: Union[str, Path, Mapping[str, Any], None]) -> RunConfig:
    """Read and validate a YAML run configuration (or an already parsed mapping)."""
    if source is None or isinstance(source, Mapping):
        return config_from_dict(source)
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from None
    if raw is not None and not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)
