"""Run configuration: one YAML (or JSON) file, validated with field paths.

Every key is optional; omitted keys take the defaults of the corresponding
dataclass. ``RunConfig.echo()`` returns the fully resolved configuration,
which is written next to every artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .channel import BasestationSite, ChannelParams
from .dqn import TrainConfig
from .env import ChmParams, Grid, Scenario, TrajectorySpec, hex_layout
from .errors import ConfigError, UavhoError
from .traffic import TrafficParams

EXPLAIN_METHODS = ("exact", "sampled", "deeplift")


@dataclass
class EvalConfig:
    episodes: int = 20


@dataclass
class ExplainConfig:
    method: str = "exact"
    background_size: int = 32
    n_permutations: int = 2000
    top_k: int = 3
    max_waterfalls: int = 20


@dataclass
class RunConfig:
    scenario: Scenario = field(default_factory=Scenario)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    output_dir: str = "run"
    seed: int = 0

    def echo(self) -> dict:
        sc = self.scenario
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "scenario": {
                "bs_sites": [{"id": b.id, "position": list(b.position), "tx_power": b.tx_power,
                              "antenna_gain": b.antenna_gain, "carrier_freq": b.carrier_freq}
                             for b in sc.bs_sites],
                "grid": dataclasses.asdict(sc.grid),
                "uav_altitude": sc.uav_altitude,
                "trajectory": {**dataclasses.asdict(sc.trajectory),
                               "waypoints": [list(p) for p in sc.trajectory.waypoints]},
                "episode_steps": sc.episode_steps,
                "channel": dataclasses.asdict(sc.channel),
                "traffic": _traffic_echo(sc.traffic),
                "reward_weights": list(sc.reward_weights),
                "rsrp_threshold": sc.rsrp_threshold,
                "rsrq_threshold": sc.rsrq_threshold,
                "num_candidates": sc.num_candidates,
                "ping_pong_window": sc.ping_pong_window,
                "chm": dataclasses.asdict(sc.chm),
                "seed": sc.seed,
            },
            "train": {**dataclasses.asdict(self.train), "hidden": list(self.train.hidden)},
            "eval": dataclasses.asdict(self.eval),
            "explain": dataclasses.asdict(self.explain),
        }

    def digest(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _traffic_echo(t: TrafficParams) -> dict:
    d = dataclasses.asdict(t)
    d["lambda"] = d.pop("lam")
    return d


def _section(data: Any, path: str) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return data


def _build(cls, data: Any, path: str, rename: Optional[dict] = None, **fixed):
    data = dict(_section(data, path))
    rename = rename or {}
    for src, dst in rename.items():
        if src in data:
            data[dst] = data.pop(src)
    names = {f.name for f in dataclasses.fields(cls)}
    back = {v: k for k, v in rename.items()}
    for key in data:
        if key not in names or key in fixed:
            raise ConfigError(f"{path}.{back.get(key, key)}: unknown field")
    try:
        return cls(**data, **fixed)
    except (TypeError, ValueError, UavhoError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def _bs_sites(data, path):
    if data is None:
        return hex_layout()
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a list of sites")
    sites = []
    for i, d in enumerate(data):
        d = dict(_section(d, f"{path}[{i}]"))
        if "position" in d:
            d["position"] = tuple(float(v) for v in d["position"])
        sites.append(_build(BasestationSite, d, f"{path}[{i}]"))
    return sites


SCENARIO_KEYS = {"bs_sites", "grid", "uav_altitude", "trajectory", "episode_steps", "channel",
                 "traffic", "reward_weights", "rsrp_threshold", "rsrq_threshold",
                 "num_candidates", "ping_pong_window", "chm", "seed"}


def build_scenario(data: Any, seed: int, path: str = "scenario") -> Scenario:
    d = dict(_section(data, path))
    for key in d:
        if key not in SCENARIO_KEYS:
            raise ConfigError(f"{path}.{key}: unknown field")
    channel = dict(_section(d.pop("channel", None), f"{path}.channel"))
    channel.setdefault("seed", d.get("seed", seed))
    traj = dict(_section(d.pop("trajectory", None), f"{path}.trajectory"))
    if "waypoints" in traj:
        traj["waypoints"] = tuple(tuple(float(c) for c in p) for p in traj["waypoints"])
    kw = {
        "bs_sites": _bs_sites(d.pop("bs_sites", None), f"{path}.bs_sites"),
        "grid": _build(Grid, d.pop("grid", None), f"{path}.grid"),
        "trajectory": _build(TrajectorySpec, traj, f"{path}.trajectory"),
        "channel": _build(ChannelParams, channel, f"{path}.channel"),
        "traffic": _build(TrafficParams, d.pop("traffic", None), f"{path}.traffic",
                          rename={"lambda": "lam"}),
        "chm": _build(ChmParams, d.pop("chm", None), f"{path}.chm"),
    }
    if "reward_weights" in d:
        d["reward_weights"] = tuple(float(w) for w in d["reward_weights"])
    d.setdefault("seed", seed)
    try:
        return Scenario(**kw, **d)
    except (TypeError, ValueError, UavhoError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def build_run_config(data: Any, source: str = "<config>") -> RunConfig:
    d = dict(_section(data, source))
    for key in d:
        if key not in ("scenario", "train", "eval", "explain", "output_dir", "seed"):
            raise ConfigError(f"{key}: unknown field")
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: must be an integer")
    train = dict(_section(d.get("train"), "train"))
    train.setdefault("seed", seed)
    explain = _build(ExplainConfig, d.get("explain"), "explain")
    if explain.method not in EXPLAIN_METHODS:
        raise ConfigError(f"explain.method: must be one of {', '.join(EXPLAIN_METHODS)}")
    if explain.background_size < 1 or explain.n_permutations < 1:
        raise ConfigError("explain: background_size and n_permutations must be >= 1")
    ev = _build(EvalConfig, d.get("eval"), "eval")
    if ev.episodes < 1:
        raise ConfigError("eval.episodes: must be >= 1")
    return RunConfig(
        scenario=build_scenario(d.get("scenario"), seed),
        train=_build(TrainConfig, train, "train"),
        eval=ev,
        explain=explain,
        output_dir=str(d.get("output_dir", "run")),
        seed=seed,
    )


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    """Read a YAML/JSON config. Missing files raise FileNotFoundError.

    ``seed`` replaces the top-level seed before anything derives from it.
    """
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML ({exc})") from None
    if seed is not None:
        data = {**_section(data, str(p)), "seed": seed}
    return build_run_config(data, str(p))
