"""Run configuration: TOML loading, validation, and content hashing.

Every artifact the harness emits embeds the config hash so results can be
traced back to the exact settings that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import SpeedLimits
from .ppo import ConfigError, PpoConfig
from .rlenv import EpisodeConfig

STAGE_MODES = ("hybrid", "privileged", "curriculum")
ABLATIONS = ("", "omega_mag", "accel", "yaw_jerk")


@dataclass
class RunConfig:
    seed: int = 0
    # stage budgets
    stage_mode: str = "hybrid"
    privileged_iterations: int = 40
    finetune_iterations: int = 40
    # reward-term ablation (training-time)
    drop_reward_term: str = ""
    # environment / episode
    v_x_max: float = 2.0
    v_z_max: float = 1.0
    omega_max: float = 1.0
    t_max: int = 480
    state_noise: bool = True
    depth_noise: bool = True
    actuation_noise: bool = True
    toy_task: bool = False
    toy_goal_distance: float = 10.0
    pool_size: int = 384
    # generalization knobs
    drone_scale: float = 1.0
    density: float = 1.0
    # perception pretraining
    ae_channels: tuple = (4, 8, 16, 16)
    ae_dataset_n: int = 3000
    ae_epochs: int = 12
    ae_lr: float = 1e-3
    ae_sigma: float = 0.1
    ae_stop_at_val: float = 0.004
    # evaluation
    eval_runs: int = 200
    eval_batch: int = 48
    # PPO hyperparameters
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if self.stage_mode not in STAGE_MODES:
            raise ConfigError(f"stage_mode must be one of {STAGE_MODES}")
        if self.drop_reward_term not in ABLATIONS:
            raise ConfigError(f"drop_reward_term must be one of {ABLATIONS}")
        if self.drone_scale <= 0 or self.density < 1.0:
            raise ConfigError("drone_scale must be > 0 and density >= 1")
        if self.eval_runs < 1 or self.pool_size < 1:
            raise ConfigError("eval_runs and pool_size must be >= 1")

    def limits(self) -> SpeedLimits:
        return SpeedLimits(self.v_x_max, self.v_z_max, self.omega_max)

    def episode_config(self, privileged: bool) -> EpisodeConfig:
        return EpisodeConfig(
            t_max=self.t_max, privileged=privileged, limits=self.limits(),
            state_noise=self.state_noise, depth_noise=self.depth_noise,
            actuation_noise=self.actuation_noise)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ae_channels"] = list(self.ae_channels)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


_SECTIONS = {"run", "stages", "env", "ablation", "scale", "ae", "eval", "ppo"}

_KEY_MAP = {
    ("run", "seed"): "seed",
    ("stages", "mode"): "stage_mode",
    ("stages", "privileged_iterations"): "privileged_iterations",
    ("stages", "finetune_iterations"): "finetune_iterations",
    ("ablation", "drop"): "drop_reward_term",
    ("env", "v_x_max"): "v_x_max",
    ("env", "v_z_max"): "v_z_max",
    ("env", "omega_max"): "omega_max",
    ("env", "t_max"): "t_max",
    ("env", "state_noise"): "state_noise",
    ("env", "depth_noise"): "depth_noise",
    ("env", "actuation_noise"): "actuation_noise",
    ("env", "toy_task"): "toy_task",
    ("env", "toy_goal_distance"): "toy_goal_distance",
    ("env", "pool_size"): "pool_size",
    ("scale", "drone_scale"): "drone_scale",
    ("scale", "density"): "density",
    ("ae", "channels"): "ae_channels",
    ("ae", "dataset_n"): "ae_dataset_n",
    ("ae", "epochs"): "ae_epochs",
    ("ae", "lr"): "ae_lr",
    ("ae", "sigma"): "ae_sigma",
    ("ae", "stop_at_val"): "ae_stop_at_val",
    ("eval", "runs"): "eval_runs",
    ("eval", "batch"): "eval_batch",
}

_PPO_KEYS = {f.name for f in dataclasses.fields(PpoConfig)}


def from_toml(path) -> RunConfig:
    """Load a RunConfig; unknown sections or keys are configuration errors."""
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"bad TOML in {path}: {e}") from e
    return from_dict(data, origin=str(path))


def from_dict(data: dict, origin: str = "<dict>") -> RunConfig:
    kwargs = {}
    ppo_kwargs = {}
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{origin}: [{section}] must be a table")
        for key, val in values.items():
            if section == "ppo":
                if key not in _PPO_KEYS:
                    raise ConfigError(f"{origin}: unknown ppo key {key!r}")
                ppo_kwargs[key] = val
            else:
                attr = _KEY_MAP.get((section, key))
                if attr is None:
                    raise ConfigError(f"{origin}: unknown key {section}.{key}")
                kwargs[attr] = tuple(val) if attr == "ae_channels" else val
    kwargs["ppo"] = PpoConfig(**ppo_kwargs)
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{origin}: {e}") from e
