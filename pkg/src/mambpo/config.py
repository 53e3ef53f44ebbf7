"""Run configuration: defaults, flat dotted-key files and ``key=value`` overrides.

Config files are TOML restricted to flat dotted keys, e.g.::

    env = "predator_prey"
    algorithm = "masac"
    gradient_steps = 1
    masac.gamma = 0.95
"""
from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .envs import NavigationScenario, PredatorPreyScenario
from .masac import SacHyperparams
from .physics import PhysicsParams
from .world_model import ModelTrainConfig

OUTPUT_ROOT_ENV = "MAMBPO_OUTPUT_ROOT"


class ConfigError(ValueError):
    def __init__(self, key: str, location: str, reason: str):
        super().__init__(f"{location}: {key}: {reason}")
        self.key = key
        self.location = location


@dataclass(frozen=True)
class ModelSection:
    lr: float = 0.01
    l2: float = 0.001
    hidden: tuple = (200, 200, 200, 200)
    batch: int = 512
    interval: int = 250
    gradient_steps: int = 500
    ensemble_size: int = 10
    logvar_min: float = -5.0
    logvar_max: float = -2.0
    logvar_sharpness: float = 2.0
    normalize: bool = True
    rollouts: int = 40
    rollout_length: int = 1
    holdout_fraction: float = 0.1

    def train_config(self) -> ModelTrainConfig:
        return ModelTrainConfig(self.interval, self.gradient_steps, self.batch, self.lr, self.l2,
                                self.holdout_fraction)


@dataclass(frozen=True)
class ReplaySection:
    real_fraction: float = 0.1
    env_capacity: int = 1_000_000
    model_capacity: int = 50_000


@dataclass(frozen=True)
class TrainSection:
    warmup: int = 1000
    checkpoint_every: int = 250


def _default_output_dir() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


@dataclass(frozen=True)
class RunConfig:
    env: str = "navigation"
    algorithm: str = "mambpo"
    gradient_steps: int = 10
    seed: int = 0
    episodes: int = 5000
    output_dir: str = field(default_factory=_default_output_dir)
    model: ModelSection = ModelSection()
    masac: SacHyperparams = SacHyperparams()
    replay: ReplaySection = ReplaySection()
    train: TrainSection = TrainSection()
    physics: PhysicsParams = PhysicsParams()
    navigation: NavigationScenario = NavigationScenario()
    predator_prey: PredatorPreyScenario = PredatorPreyScenario()

    @property
    def model_based(self) -> bool:
        return self.algorithm == "mambpo"

    @property
    def scenario(self):
        return self.navigation if self.env == "navigation" else self.predator_prey

    def replace(self, **flat) -> "RunConfig":
        return resolve({**flatten(self), **flat}, location="replace()")


SECTIONS = ("model", "masac", "replay", "train", "physics", "navigation", "predator_prey")
_CHOICES = {"env": ("navigation", "predator_prey"), "algorithm": ("mambpo", "masac")}
_UNIT = {"masac.gamma", "masac.tau", "replay.real_fraction", "model.holdout_fraction"}
_NONNEG = {"seed", "model.l2", "train.warmup"}
_ANY_SIGN = {"masac.target_entropy", "model.logvar_min", "model.logvar_max"}
_FIXED = {"navigation.n_agents", "navigation.n_landmarks", "predator_prey.n_predators"}


def _field_types() -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(RunConfig):
        if f.name in SECTIONS:
            for sf in dataclasses.fields(type(getattr(RunConfig(), f.name))):
                out[f"{f.name}.{sf.name}"] = sf.default
        else:
            out[f.name] = getattr(RunConfig(), f.name)
    return out


DEFAULTS = _field_types()


def flatten(cfg: RunConfig) -> dict[str, Any]:
    out = {}
    for key in DEFAULTS:
        if "." in key:
            sec, name = key.split(".", 1)
            out[key] = getattr(getattr(cfg, sec), name)
        else:
            out[key] = getattr(cfg, key)
    return out


def _coerce(key: str, value, location: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError("expected an integer")
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError("expected a number")
            return float(value)
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and v > 0 for v in value):
                raise TypeError("expected a list of positive integers")
            return tuple(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError("expected a string")
            value = value.lower() if key in _CHOICES else value
            if key in _CHOICES and value not in _CHOICES[key]:
                raise TypeError(f"expected one of {', '.join(_CHOICES[key])}")
            return value
    except TypeError as exc:
        raise ConfigError(key, location, f"{exc}, got {value!r}") from None
    return value


def _check_range(key: str, value, location: str) -> None:
    if key in _FIXED:
        if value != DEFAULTS[key]:
            raise ConfigError(key, location, f"must be {DEFAULTS[key]}")
        return
    if not isinstance(value, (int, float)) or isinstance(value, bool) or key in _ANY_SIGN:
        return
    if key in _UNIT and not 0.0 <= value <= 1.0:
        raise ConfigError(key, location, f"must lie in [0, 1], got {value}")
    if key == "physics.damping":
        if not 0.0 <= value < 1.0:
            raise ConfigError(key, location, f"must lie in [0, 1), got {value}")
        return
    if key in _NONNEG or key in _UNIT:
        if value < 0:
            raise ConfigError(key, location, f"must be non-negative, got {value}")
    elif value <= 0:
        raise ConfigError(key, location, f"must be positive, got {value}")


ALIASES = {"G": "gradient_steps", "M": "model.rollouts", "k": "model.rollout_length"}


def resolve(flat: dict[str, Any], location: str = "<config>") -> RunConfig:
    values = dict(DEFAULTS, output_dir=_default_output_dir())
    for key, value in flat.items():
        key = ALIASES.get(key, key)
        if key not in DEFAULTS:
            raise ConfigError(key, location, "unknown key")
        value = _coerce(key, value, location)
        _check_range(key, value, location)
        values[key] = value
    if values["model.logvar_min"] >= values["model.logvar_max"]:
        raise ConfigError("model.logvar_min", location, "must be below model.logvar_max")
    if values["gradient_steps"] < 1:
        raise ConfigError("gradient_steps", location, "must be >= 1")
    if values["predator_prey.predator_max_speed"] >= values["predator_prey.prey_max_speed"]:
        raise ConfigError("predator_prey.predator_max_speed", location, "predators must be slower than the prey")
    top = {k: v for k, v in values.items() if "." not in k}
    sections = {}
    for sec in SECTIONS:
        cls = type(getattr(RunConfig(), sec))
        kwargs = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(sec + ".")}
        sections[sec] = cls(**kwargs)
    return RunConfig(**top, **sections)


def _flatten_toml(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten_toml(v, key + "."))
        else:
            out[key] = v
    return out


def _line_of(text: str, key: str) -> int | None:
    pattern = re.compile(r"^\s*" + r"\s*\.\s*".join(re.escape(p) for p in key.split(".")) + r"\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        if pattern.match(line):
            return n
    return None


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(item, "--set", "expected key=value")
    key, raw = (s.strip() for s in item.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare strings such as algorithm=masac
    return key, value


def parse_config(path=None, overrides=(), **inline) -> RunConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides, then keyword overrides."""
    flat: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError("<file>", str(path), str(exc)) from exc
        try:
            tree = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", str(path), f"malformed config: {exc}") from exc
        for key, value in _flatten_toml(tree).items():
            line = _line_of(text, key)
            loc = f"{path}:{line}" if line else str(path)
            resolve({**flat, key: value}, location=loc)
            flat[key] = value
    for n, item in enumerate(overrides, 1):
        key, value = parse_override(item)
        resolve({**flat, key: value}, location=f"--set #{n} ({item})")
        flat[key] = value
    for key, value in inline.items():
        key = key.replace("__", ".")
        resolve({**flat, key: value}, location=f"keyword {key}")
        flat[key] = value
    return resolve(flat, location=str(path) if path else "<defaults>")


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, tuple):
        return "[" + ", ".join(str(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{key} = {_toml_value(value)}" for key, value in flatten(cfg).items()]
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
