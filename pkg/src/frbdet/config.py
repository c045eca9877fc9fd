"""Run configuration read from flat ``key = value`` text files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import CurriculumSchedule
from .head import LossWeights
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    # loss
    lambda_g: float = 0.2
    lambda_theta: float = 10.0
    score_loss: str = "dice"
    lr: float = 0.01
    momentum: float = 0.9
    decay_steps: int = 15000
    decay_factor: float = 10.0
    # data
    manifest: str = ""
    image_size: int = 128
    batch_size: int = 4
    shrink_ratio: float = 0.3
    curriculum: bool = True
    schedule: str = ""  # empty -> CurriculumSchedule.default(iterations)
    iterations: int = 500
    seed: int = 0
    # output
    out_dir: str = "runs"
    checkpoint_every: int = 0
    log_every: int = 10
    # detection
    geometry: str = "rbox"
    score_thresh: float = 0.8
    merge_iou: float = 0.2
    nms_iou: float = 0.2

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need lr > 0 and momentum in [0, 1)")
        if self.decay_steps < 1 or self.decay_factor < 1:
            raise ConfigError("decay_steps must be >= 1 and decay_factor >= 1")
        if self.image_size % 32 or self.image_size < 32:
            raise ConfigError("image_size must be a positive multiple of 32")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("batch_size must be >= 1 and iterations >= 0")
        if self.geometry not in ("rbox", "quad"):
            raise ConfigError(f"geometry must be rbox or quad, got {self.geometry!r}")
        if not 0 < self.score_thresh < 1:
            raise ConfigError("score_thresh must lie in (0, 1)")
        try:
            LossWeights(self.lambda_g, self.lambda_theta, self.score_loss)
            self.curriculum_schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def loss_weights(self):
        return LossWeights(self.lambda_g, self.lambda_theta, self.score_loss)

    def curriculum_schedule(self):
        if self.schedule:
            return CurriculumSchedule.parse(self.schedule)
        return CurriculumSchedule.default(self.iterations)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "model"}
        d.update(self.model.to_dict())
        return d

    @classmethod
    def from_dict(cls, values: dict):
        model_fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
        run_fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "model"}
        model_kw, run_kw = {}, {}
        for key, value in values.items():
            if key in model_fields:
                model_kw[key] = _coerce(value, model_fields[key].default)
            elif key in run_fields:
                run_kw[key] = _coerce(value, run_fields[key].default)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(model=ModelConfig(**model_kw), **run_kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _coerce(value, default):
    if not isinstance(value, str):
        return value
    try:
        if isinstance(default, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(type(default[0])(v) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r} like {default!r}") from exc
    return value


def parse_config_text(text):
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def load_config(path) -> RunConfig:
    """Parse a config file; relative ``manifest``/``out_dir`` resolve against its directory."""
    path = Path(path)
    values = parse_config_text(path.read_text(encoding="utf-8"))
    for key in ("manifest", "out_dir"):
        if values.get(key) and not Path(values[key]).is_absolute():
            values[key] = str(path.parent / values[key])
    return RunConfig.from_dict(values)


def dump_config(cfg: RunConfig):
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
