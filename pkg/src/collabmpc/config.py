"""Run configuration: weights, solver budgets, scenario knobs, persistence.

Config files are INI-style key/value sections (see README); command-line
flags override file values. Every output artifact embeds the hash of the
fully resolved configuration so runs are attributable and comparable.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError

# Anchor priors use this weight everywhere; strong enough that solved
# trajectories stay within 1e-4 of the observed start.
ANCHOR_WEIGHT = 1e6


@dataclass(frozen=True)
class RobotWeights:
    obstacle: float = 50.0
    velocity: float = 1.0
    acceleration: float = 0.5
    joint: float = 100.0
    orientation: float = 5.0
    brake: float = 1.0
    joint_eps: float = 0.05


@dataclass(frozen=True)
class AgentWeights:
    obstacle: float = 50.0
    velocity: float = 1.0
    acceleration: float = 0.5
    goal: float = 0.0
    brake: float = 1.0
    margin: float = 0.0


@dataclass(frozen=True)
class InteractionWeights:
    lam_robot: float = 1.0
    lam_agent: float = 1.0
    lam_interaction: float = 10.0
    lam_reward: float = 2.0
    sigma: float = 0.2


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 25
    outer_iters: int = 4
    g_tol: float = 1e-8
    s_tol: float = 1e-10
    w_tol: float = 1e-4
    budget_ms: float | None = None  # wall-clock cap; None keeps runs bitwise reproducible


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 30
    dt: float = 0.1
    engage_threshold: float = 0.10
    disengage_factor: float = 2.0
    stale_after: float = 0.5


@dataclass(frozen=True)
class SimConfig:
    chain: str = "franka7"
    agent_radius: float = 0.10
    agent_speed: float = 0.25       # nominal hand speed, m/s
    min_plan_steps: int = 20
    max_plan_steps: int = 60
    plan_noise: float = 0.01        # uniform de-biasing noise per axis, m
    penetration_tol: float = 0.05
    attractor_horizon: int = 5
    max_scenario_draws: int = 40


@dataclass(frozen=True)
class RunConfig:
    robot: RobotWeights = field(default_factory=RobotWeights)
    agent: AgentWeights = field(default_factory=AgentWeights)
    interaction: InteractionWeights = field(default_factory=InteractionWeights)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    out_dir: str = "out"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "robot": RobotWeights,
    "agent": AgentWeights,
    "interaction": InteractionWeights,
    "solver": SolverConfig,
    "mpc": MpcConfig,
    "sim": SimConfig,
}


def _coerce(cls, name: str, raw: str):
    ftypes = {f.name: f.type for f in dataclasses.fields(cls)}
    if name not in ftypes:
        raise ConfigError(f"unknown option {name!r} for section [{cls.__name__}]")
    t = ftypes[name]
    if raw.lower() in ("none", ""):
        return None
    if t in ("int", int):
        return int(raw)
    if t in ("str", str):
        return raw
    return float(raw)


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional INI file plus override pairs.

    overrides maps "section.option" to values (already typed or strings).
    """
    values: dict = {name: {} for name in _SECTIONS}
    top: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path!r}")
        for section in parser.sections():
            if section == "run":
                for k, v in parser.items(section):
                    if k == "seed":
                        top["seed"] = int(v)
                    elif k == "out_dir":
                        top["out_dir"] = v
                    else:
                        raise ConfigError(f"unknown option {k!r} in [run]")
                continue
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for k, v in parser.items(section):
                values[section][k] = _coerce(_SECTIONS[section], k, v)
    for key, v in (overrides or {}).items():
        if key in ("seed", "out_dir"):
            top[key] = int(v) if key == "seed" else v
            continue
        section, _, option = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(v, str):
            v = _coerce(_SECTIONS[section], option, v)
        values[section][option] = v
    try:
        kwargs = {name: cls(**values[name]) for name, cls in _SECTIONS.items()}
    except TypeError as exc:
        raise ConfigError(str(exc))
    return RunConfig(**{
        "robot": kwargs["robot"], "agent": kwargs["agent"],
        "interaction": kwargs["interaction"], "solver": kwargs["solver"],
        "mpc": kwargs["mpc"], "sim": kwargs["sim"], **top,
    })


def config_hash(cfg: RunConfig) -> str:
    """Stable hash of the fully resolved configuration."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
