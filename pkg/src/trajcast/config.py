"""Training configuration and its ``key = value`` file format.

Model settings and training settings share one flat namespace in the
file; ``TrainConfig.model`` holds the model half.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .losses import BASE_LOSSES, PenaltySchedule
from .model import ModelConfig

SCENE_SOURCES = ("grid", "constant", "file")
STORAGE_DTYPES = {"f4": "<f4", "f8": "<f8"}


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 200
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    accumulate: int = 1
    k_eval: int = 20
    k_train: int = 5
    train_sample_from: str = "posterior"
    kl_coeff: float = 1.0
    penalty: str = "parabolic"
    penalty_alpha: float = 2.0
    penalty_beta: float = 1.0
    base_loss: str = "smooth_l1"
    seed: int = 0
    augment: bool = False
    augment_probability: float = 0.5
    augment_rotate: bool = True
    augment_sigma: float = 1.0
    eval_every: int = 1
    val_fraction: float = 0.1
    data: str = ""
    held_out: str = ""
    stride: int = 1
    resample: bool = False
    layout: str = "frame_agent_xy"
    column_order: str = "xy"
    scene_source: str = "grid"
    grid: int = 8
    synth_kind: str = ""
    synth_n: int = 32
    synth_agents: int = 2
    synth_seed: int = 0
    storage_dtype: str = "f4"
    out: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def mode(self) -> str:
        return self.model.mode

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.accumulate < 1 or self.eval_every < 1:
            raise ConfigError("accumulate and eval_every must be >= 1")
        if self.k_eval < 1 or self.k_train < 1:
            raise ConfigError("k_eval and k_train must be >= 1")
        if self.train_sample_from not in ("posterior", "prior"):
            raise ConfigError("train_sample_from must be 'posterior' or 'prior'")
        if not 0 <= self.lr_min <= self.lr_max:
            raise ConfigError("need 0 <= lr_min <= lr_max")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.base_loss not in BASE_LOSSES:
            raise ConfigError(f"base_loss must be one of {BASE_LOSSES}")
        if self.scene_source not in SCENE_SOURCES:
            raise ConfigError(f"scene_source must be one of {SCENE_SOURCES}")
        if self.storage_dtype not in STORAGE_DTYPES:
            raise ConfigError(f"storage_dtype must be one of {tuple(STORAGE_DTYPES)}")
        if self.kl_coeff < 0:
            raise ConfigError("kl_coeff must be >= 0")
        self.schedule()

    def schedule(self) -> PenaltySchedule:
        return PenaltySchedule(self.penalty, self.penalty_alpha, self.penalty_beta,
                               self.model.t_pred)

    @property
    def k_effective(self) -> int:
        """Samples drawn at evaluation: always 1 for deterministic models."""
        return 1 if self.mode == "deterministic" else self.k_eval

    def items(self) -> list[tuple[str, object]]:
        out = [(f.name, getattr(self.model, f.name)) for f in fields(ModelConfig)]
        out += [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "model"]
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.items())

    def updated(self, **overrides) -> "TrainConfig":
        return from_mapping({**dict(self.items()), **overrides})


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


_MODEL_TYPES = _field_types(ModelConfig)
_TRAIN_TYPES = {k: v for k, v in _field_types(TrainConfig).items() if k != "model"}


def parse_value(key: str, raw, typ: type):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if typ is bool:
            low = s.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(s)
        if typ is int:
            return int(s)
        if typ is float:
            return float(s)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {s!r} as {typ.__name__}") from None
    return s


def from_mapping(values: dict) -> TrainConfig:
    """Build a config from flat ``key -> value`` pairs (strings are parsed)."""
    model_kw, train_kw = {}, {}
    for key, raw in values.items():
        if key in _MODEL_TYPES:
            model_kw[key] = parse_value(key, raw, _MODEL_TYPES[key])
        elif key in _TRAIN_TYPES:
            train_kw[key] = parse_value(key, raw, _TRAIN_TYPES[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if "mode" in model_kw:
        model_kw["mode"] = normalize_mode(model_kw["mode"])
    return TrainConfig(model=ModelConfig(**model_kw), **train_kw)


def normalize_mode(mode: str) -> str:
    aliases = {"det": "deterministic", "stoch": "stochastic"}
    return aliases.get(mode, mode)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path, **overrides) -> TrainConfig:
    """Read a config file; ``overrides`` (e.g. CLI flags) win over file values.

    A relative ``data`` or ``out`` path is resolved against the config file's
    directory.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values = parse_config_text(text, str(path))
    for key in ("data", "out"):
        if values.get(key) and not Path(values[key]).is_absolute():
            values[key] = str(path.parent / values[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return from_mapping(values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


__all__ = ["TrainConfig", "load_config", "from_mapping", "parse_config_text"]
