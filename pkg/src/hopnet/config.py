"""Run configuration: nested dataclasses with YAML round-tripping.

Unknown keys are rejected at load time so that typos fail loudly instead of
silently falling back to defaults.
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Optional

import yaml

from .errors import ConfigError


@dataclass
class DatasetConfig:
    seed: int = 0
    num_train: int = 300
    num_test: int = 30
    steps: int = 64
    min_objects: int = 2
    max_objects: int = 6
    shapes: tuple = ("sphere", "box")
    sphere_radius: tuple = (0.15, 0.3)
    box_extent: tuple = (0.25, 0.5)
    sphere_subdivision: int = 1
    box_subdivision: int = 1
    mass: tuple = (0.5, 2.0)
    friction: tuple = (0.2, 0.8)
    restitution: tuple = (0.3, 0.9)
    floor_friction: float = 1.0
    floor_restitution: float = 1.0
    spawn_half_width: float = 1.0
    spawn_height: tuple = (0.05, 0.6)
    speed: tuple = (0.01, 0.05)
    vertical_speed: tuple = (-0.02, 0.02)
    angular_speed: float = 0.05
    gravity: tuple = (0.0, 0.0, -0.0098)
    solver_iterations: int = 10
    baumgarte: float = 0.2
    max_speed: float = 5.0
    placement_attempts: int = 1000


@dataclass
class ModelConfig:
    hidden: int = 128
    processor_steps: int = 1
    contact_radius: float = 0.25
    no_object_cells: bool = False
    no_center_mass_distance: bool = False
    non_sequential: bool = False
    non_sequential_rounds: int = 3
    layer_norm: bool = True
    seed: int = 0


@dataclass
class TrainConfig:
    steps: int = 20000
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    lr_decay_steps: int = 20000
    noise_std: float = 1e-3
    object_loss_weight: float = 1.0
    grad_clip: float = 1.0
    checkpoint_every: int = 5000
    log_every: int = 100
    seed: int = 0
    slow_collision_threshold: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class EvalConfig:
    horizons: tuple = (25, 50, 75, 100)
    metric_mode: str = "paper"


@dataclass
class Config:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        return _plain(asdict(self))

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, data):
        cfg = _build(cls, data or {}, "config")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Optional[str]):
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def validate(self):
        d, m, t, e = self.dataset, self.model, self.training, self.evaluation
        checks = [
            (1 <= d.min_objects <= d.max_objects, "dataset object-count range"),
            (d.steps >= 0, "dataset.steps must be >= 0"),
            (d.num_train >= 0 and d.num_test >= 0, "trajectory counts must be >= 0"),
            (set(d.shapes) <= {"sphere", "box"} and len(d.shapes) > 0, "dataset.shapes must be sphere/box"),
            (0 < d.sphere_radius[0] <= d.sphere_radius[1], "sphere_radius range"),
            (0 < d.box_extent[0] <= d.box_extent[1], "box_extent range"),
            (0 < d.mass[0] <= d.mass[1], "mass range"),
            (0 <= d.friction[0] <= d.friction[1] <= 1.5, "friction range"),
            (0 <= d.restitution[0] <= d.restitution[1] <= 1.0, "restitution range"),
            (d.solver_iterations >= 1, "solver_iterations"),
            (m.hidden >= 1 and m.processor_steps >= 1, "model sizes"),
            (m.contact_radius > 0, "contact_radius must be positive"),
            (m.non_sequential_rounds >= 1, "non_sequential_rounds"),
            (t.steps >= 0 and t.lr_start >= 0 and t.lr_end >= 0, "training schedule"),
            (t.noise_std >= 0, "noise_std"),
            (t.object_loss_weight >= 0, "object_loss_weight"),
            (e.metric_mode in ("paper", "squared"), "metric_mode must be paper or squared"),
            (all(h >= 1 for h in e.horizons), "horizons must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{name}: expected true/false")
            kwargs[name] = value
        elif isinstance(default, int):
            kwargs[name] = int(value)
        elif isinstance(default, float):
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)
