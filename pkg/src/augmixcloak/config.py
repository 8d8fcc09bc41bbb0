"""Flat JSON experiment configuration."""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augmentation import AugIntensity
from .classifier import ARCHITECTURES, TrainConfig
from .defense import DefenseConfig
from .dfl import TOPOLOGIES

ATTACKER_PLACEMENTS = ("entry", "center", "leaf")
WEIGHT_DECAY_GRID = (0.0, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2)
MAX_CONF_GRID = (0.3, 0.5, 0.7, 0.9, 0.95, 0.99)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = ""
    dataset_format: str = "idx"
    dataset_name: str = ""
    test_dataset: str = ""  # empty: carve the test pool out of ``dataset``
    train_size: int = 0  # 0: use every training sample
    n_participants: int = 4
    topology: str = "fully"
    rounds: int = 5
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.05
    weight_decay: float = 0.0
    arch: str = "cnn"
    defense: object = field(default_factory=lambda: {"n": [0, 1], "w": [0.7, 0.3], "alpha": 0.8})  # or "tune"
    attacker: str = "entry"
    eval_members: int = 500
    eval_nonmembers: int = 500
    k_shadows: int = 3
    shadow_split: int = 0  # 0: per-participant partition size
    shadow_epochs: int = 0  # 0: rounds * epochs
    pca_scalar_stats: bool = False
    refinement_steps: int = 3
    alpha_grid: list = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9])
    weight_decay_grid: list = field(default_factory=lambda: list(WEIGHT_DECAY_GRID))
    max_conf_grid: list = field(default_factory=lambda: list(MAX_CONF_GRID))
    output_dir: str = "out"
    seed: int = 0

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.attacker not in ATTACKER_PLACEMENTS:
            raise ConfigError(f"attacker must be one of {ATTACKER_PLACEMENTS}, got {self.attacker!r}")
        if self.attacker in ("center", "leaf") and self.topology != "star":
            raise ConfigError(f"attacker placement {self.attacker!r} only applies to the star topology")
        min_n = 3 if self.topology == "ring" else 2
        if self.n_participants < min_n:
            raise ConfigError(f"{self.topology} topology needs at least {min_n} participants")
        if self.dataset_format not in ("idx", "image-dir"):
            raise ConfigError(f"dataset_format must be 'idx' or 'image-dir', got {self.dataset_format!r}")
        if check_paths:
            for key in ("dataset", "test_dataset"):
                value = getattr(self, key)
                if (key == "dataset" or value) and not Path(value).exists():
                    raise ConfigError(f"{key} path does not exist: {value!r}")
        if self.defense != "tune":
            self.defense_config()
        self.train_config()
        return self

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.weight_decay, self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def defense_config(self) -> DefenseConfig:
        if self.defense == "tune":
            raise ConfigError("defense is 'tune'; run the tuner to obtain a configuration")
        d = self.defense
        try:
            return DefenseConfig(AugIntensity(d["n"], d["w"]), d["alpha"], d.get("enabled", True))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid defense setting {d!r}: {exc}") from exc

    @property
    def entry_id(self) -> int:
        # star leaves start at id 1; center and the fully/ring representative are id 0
        return 1 if self.attacker == "leaf" else 0

    @property
    def topology_label(self) -> str:
        if self.topology == "star":
            return f"star-{'leaf' if self.attacker == 'leaf' else 'center'}"
        return self.topology

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def field_names() -> list:
    return [f.name for f in dataclasses.fields(ExperimentConfig)]


def load_config(path=None, overrides: dict | None = None, check_paths: bool = True) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        # relative paths in a config file resolve against the file's directory
        base = Path(path).parent
        for key in ("dataset", "test_dataset", "output_dir"):
            value = data.get(key)
            if isinstance(value, str) and value and not Path(value).is_absolute():
                data[key] = str(base / value)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(data) - set(field_names())
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data).validate(check_paths)
