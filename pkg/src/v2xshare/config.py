"""Run configuration and the flat ``key = value`` config file format.

A config file looks like::

    # scenario
    env.num_v2i_links = 2
    env.num_v2v_links = 2
    dqn.learning_rate = 0.001
    train.mode = marl

Keys are ``<section>.<field>``; sections are ``env``, ``reward``, ``dqn`` and
``train``. Values are coerced to the type of the field they target.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

MODES = ("marl", "sarl", "random")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


@dataclass
class ScenarioConfig:
    num_v2i_links: int = 4
    num_v2v_links: int = 4
    # Manhattan grid, wrapped into a torus at the map edges
    block_width: float = 250.0
    block_height: float = 433.0
    num_blocks_x: int = 3
    num_blocks_y: int = 3
    lanes_per_direction: int = 2
    lane_width: float = 3.5
    bs_position: tuple[float, float] | None = None  # None -> map centre
    vehicle_speed: float = 15.0
    turn_left_prob: float = 0.25
    turn_right_prob: float = 0.25
    carrier_freq: float = 2e9
    bandwidth: float = 1e6
    v2i_tx_power: float = 23.0
    noise_power: float = -114.0
    shadow_std_v2i: float = 8.0
    shadow_std_v2v: float = 3.0
    v2i_pl_intercept: float = 128.1
    v2i_pl_slope: float = 37.6
    v2v_pl_intercept: float = 38.77
    v2v_pl_slope: float = 16.7
    v2v_pl_freq_coef: float = 18.2
    min_distance_clip: float = 3.0
    step_dt: float = 1e-3
    steps_per_episode: int = 100
    sinr_cap_db: float | None = None
    # a V2V link that has delivered its payload stops transmitting
    silence_delivered: bool = True
    # re-pair V2V links by nearest neighbour whenever vehicles move an episode
    repair_links_each_episode: bool = True

    @property
    def map_size(self) -> tuple[float, float]:
        return self.num_blocks_x * self.block_width, self.num_blocks_y * self.block_height

    @property
    def bs_xy(self) -> tuple[float, float]:
        if self.bs_position is not None:
            return tuple(self.bs_position)
        w, h = self.map_size
        return w / 2.0, h / 2.0

    @property
    def time_budget(self) -> float:
        return self.steps_per_episode * self.step_dt

    def validate(self) -> None:
        if self.num_v2i_links < 1 or self.num_v2v_links < 1:
            raise ConfigError("need at least one V2I link and one V2V link")
        if self.bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        if self.step_dt <= 0 or self.steps_per_episode < 1:
            raise ConfigError("step_dt must be positive and steps_per_episode >= 1")
        if self.vehicle_speed < 0:
            raise ConfigError("vehicle_speed must be >= 0")
        if self.min_distance_clip <= 0:
            raise ConfigError("min_distance_clip must be positive")
        if self.lanes_per_direction < 1 or self.num_blocks_x < 1 or self.num_blocks_y < 1:
            raise ConfigError("grid needs at least one block and one lane per direction")
        p_turn = self.turn_left_prob + self.turn_right_prob
        if min(self.turn_left_prob, self.turn_right_prob) < 0 or p_turn > 1:
            raise ConfigError("turn probabilities must be >= 0 and sum to <= 1")
        if self.shadow_std_v2i < 0 or self.shadow_std_v2v < 0:
            raise ConfigError("shadowing std must be >= 0")


@dataclass
class RewardWeights:
    lambda_c: float = 0.1
    lambda_p: float = 0.9
    beta: float = 10.0

    def validate(self) -> None:
        if min(self.lambda_c, self.lambda_p, self.beta) < 0:
            raise ConfigError("reward weights must be >= 0")


@dataclass
class DQNConfig:
    hidden: tuple[int, ...] = (500, 250, 120)
    learning_rate: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 64
    updates_per_episode: int = 2
    target_sync_period: int = 400
    replay_capacity: int = 100_000
    grad_clip: float = 10.0
    optimizer: str = "adam"

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.replay_capacity < 1 or self.target_sync_period < 1:
            raise ConfigError("batch_size, replay_capacity and target_sync_period must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


@dataclass
class TrainConfig:
    episodes: int = 3000
    payload_bytes: float = 2120.0
    eps_start: float = 1.0
    eps_end: float = 0.02
    # None -> 80% of `episodes`
    eps_anneal_episodes: int | None = None
    mode: str = "marl"
    seed: int = 0
    checkpoint_every: int = 500
    test_episodes: int = 100
    test_seed_offset: int = 1_000_003
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    dqn: DQNConfig = field(default_factory=DQNConfig)

    @property
    def anneal_episodes(self) -> int:
        if self.eps_anneal_episodes is not None:
            return self.eps_anneal_episodes
        return max(1, round(0.8 * self.episodes))

    def validate(self) -> None:
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.payload_bytes <= 0:
            raise ConfigError("payload_bytes must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.scenario.validate()
        self.reward.validate()
        self.dqn.validate()


_SECTIONS = {"env": "scenario", "reward": "reward", "dqn": "dqn", "train": None}


def _coerce(raw: str, type_name: str, key: str) -> Any:
    text = raw.strip()
    optional = "None" in type_name
    if optional and text.lower() in ("none", "null", ""):
        return None
    if type_name.startswith("bool"):
        if text.lower() in ("true", "yes", "1", "on"):
            return True
        if text.lower() in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if type_name.startswith("tuple"):
        parts = [p for p in text.strip("()[] ").replace(",", " ").split() if p]
        conv = int if type_name.startswith("tuple[int") else float
        try:
            return tuple(conv(p) for p in parts)
        except ValueError:
            raise ConfigError(f"{key}: bad sequence {raw!r}") from None
    if type_name.startswith("str"):
        return text.strip("\"'")
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if type_name.startswith("int"):
        if not value.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        return int(value)
    return value


def apply_overrides(cfg: TrainConfig, pairs: dict[str, str]) -> TrainConfig:
    """Apply dotted ``section.field`` string overrides to `cfg` in place."""
    for key, raw in pairs.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        attr = _SECTIONS[section]
        target = cfg if attr is None else getattr(cfg, attr)
        types = {f.name: f.type for f in dataclasses.fields(target)}
        if name not in types or name in ("scenario", "reward", "dqn"):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, name, _coerce(raw, types[name], key))
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | Path) -> TrainConfig:
    """Read a config file on top of the defaults and validate the result."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = apply_overrides(TrainConfig(), parse_config_text(text))
    cfg.validate()
    return cfg


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: TrainConfig) -> str:
    """Serialize `cfg` in the same grammar `load_config` reads."""
    lines = []
    for section, attr in _SECTIONS.items():
        target = cfg if attr is None else getattr(cfg, attr)
        for f in dataclasses.fields(target):
            if f.name in ("scenario", "reward", "dqn"):
                continue
            lines.append(f"{section}.{f.name} = {_fmt(getattr(target, f.name))}")
    return "\n".join(lines) + "\n"
