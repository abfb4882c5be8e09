"""Run configuration shared by every CLI command.

Values are resolved in increasing precedence: built-in defaults, a named
preset, a JSON config file, explicit command-line flags.  A seed that is still
unset after that falls back to ``$GCA_SEED``, then 0.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .data import FAMILIES
from .errors import ConfigError
from .grid import METRICS, NeighborhoodSpec
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # data
    grid: int = 16
    families: tuple = ("ring", "box_shell")
    count: int = 16
    gap: int = 4
    # neighborhood and chains
    radius: int = 2
    metric: str = "L1"
    w: float = 0.005
    T: int = 100
    k: int = 10
    # training
    t_hat: int = 5
    buffer_size: int = 256
    batch_size: int = 32
    t_max: int = 200
    lr: float = 5e-4
    decay_every: int = 10_000
    decay_factor: float = 0.5
    steps: int = 1000
    checkpoint_every: int = 0
    channels: tuple = (1, 8, 16, 16, 8)
    conv_radius: int = 1
    conv_metric: str = "Linf"
    first_radius: Optional[int] = None
    global_context: bool = False
    centroid_features: bool = False
    mode: str = "generation"
    # reproducibility
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "channels", tuple(self.channels))

    def validate(self) -> "RunConfig":
        if self.grid < 8:
            raise ConfigError(f"grid must be >= 8, got {self.grid}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad or not self.families:
            raise ConfigError(f"unknown families {bad}; choose from {', '.join(FAMILIES)}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        for name in ("count", "radius", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        self.train_config()  # raises on bad training settings
        return self

    @property
    def spec(self) -> NeighborhoodSpec:
        return NeighborhoodSpec(self.radius, self.metric)

    def resolved_seed(self) -> int:
        return 0 if self.seed is None else int(self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            buffer_size=self.buffer_size, batch_size=self.batch_size, t_hat=self.t_hat,
            t_max=self.t_max, w=self.w, radius=self.radius, metric=self.metric,
            channels=self.channels, conv_radius=self.conv_radius,
            conv_metric=self.conv_metric, first_radius=self.first_radius,
            global_context=self.global_context, centroid_features=self.centroid_features, lr=self.lr,
            decay_every=self.decay_every, decay_factor=self.decay_factor, steps=self.steps,
            seed=self.resolved_seed(), mode=self.mode, checkpoint_every=self.checkpoint_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        d["channels"] = list(self.channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:10]

    def write(self, directory) -> Path:
        path = Path(directory) / "config.json"
        path.write_text(self.to_json(), encoding="utf-8")
        return path


FIELD_NAMES = tuple(f.name for f in fields(RunConfig))

# desk-scale network shared by both presets: wide first layer plus the state-mean path
_DESK_NET = {"channels": [1, 16, 32, 32, 16], "first_radius": 4, "global_context": True,
             "lr": 1e-3, "decay_every": 7500}

PRESETS = {
    "paper-generation": {"radius": 2, "metric": "L1", "T": 100, "w": 0.005, "grid": 16,
                         "mode": "generation", "families": ["ring", "box_shell"], "count": 16,
                         "batch_size": 32, "steps": 12_000, **_DESK_NET},
    "paper-completion": {"radius": 3, "metric": "L1", "T": 70, "w": 0.005, "grid": 32,
                         "mode": "completion", "families": ["bimodal"], "k": 10, "batch_size": 32,
                         "steps": 4000, **_DESK_NET},
}


def _check_keys(d: dict, where: str) -> None:
    unknown = sorted(set(d) - set(FIELD_NAMES))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _check_keys(d, str(path))
    return d


def resolve(preset: Optional[str] = None, config_file=None, overrides: Optional[dict] = None,
            env=None) -> RunConfig:
    """Merge defaults, preset, file and overrides (``None`` values are ignored)."""
    env = os.environ if env is None else env
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        cfg = replace(cfg, **PRESETS[preset])
    if config_file is not None:
        cfg = replace(cfg, **load_config_file(config_file))
    over = {k: v for k, v in (overrides or {}).items() if v is not None}
    _check_keys(over, "overrides")
    cfg = replace(cfg, **over)
    if cfg.seed is None and env.get("GCA_SEED"):
        try:
            cfg = replace(cfg, seed=int(env["GCA_SEED"]))
        except ValueError:
            raise ConfigError(f"GCA_SEED must be an integer, got {env['GCA_SEED']!r}") from None
    if cfg.seed is None:
        cfg = replace(cfg, seed=0)
    try:
        return cfg.validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
