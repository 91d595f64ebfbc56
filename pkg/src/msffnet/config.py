"""Training configuration, named profiles and TOML loading."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .model import NetConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 2.0
    mu: float = 5000.0
    gamma: float = 2.2
    lr_init: float = 1e-4
    lr_final: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    flow_lr_scale: float = 1.0  # step-size multiplier for the flow estimators
    flow_warmup: int = 0  # initial steps with the flow estimators frozen
    batch_size: int = 8
    epochs: int = 210
    patch_size: int = 256
    patch_stride: int = 128
    channels: int = 64
    reduction: int = 16
    flow_widths: tuple[int, ...] = (64, 64, 32, 16)
    seed: int = 0
    precision: str = "float32"
    augment: bool = True
    checkpoint_every: int = 0  # epochs between intermediate checkpoints; 0 keeps only the final one
    prefetch: int = 2  # batches queued by the loader thread; 0 loads inline
    profile: str = field(default="paper", compare=False)

    def __post_init__(self):
        problems = []
        if self.lr_init <= 0 or self.lr_final <= 0:
            problems.append("learning rates must be positive")
        if self.lr_final > self.lr_init:
            problems.append(f"lr_final {self.lr_final} exceeds lr_init {self.lr_init}")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.flow_lr_scale < 0 or self.flow_warmup < 0:
            problems.append("flow_lr_scale and flow_warmup must be >= 0")
        if self.lam < 0 or self.mu <= 0 or self.gamma <= 0 or self.adam_eps <= 0:
            problems.append("lambda must be >= 0 and mu, gamma, adam_eps > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("betas must lie in [0, 1)")
        if self.patch_size % 4 or self.patch_stride < 1:
            problems.append("patch_size must be a multiple of 4 and patch_stride positive")
        if self.channels % self.reduction:
            problems.append(f"reduction {self.reduction} must divide channels {self.channels}")
        if self.precision not in ("float32", "float64"):
            problems.append(f"unknown precision {self.precision!r}")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def net(self) -> NetConfig:
        return NetConfig(channels=self.channels, reduction=self.reduction,
                         flow_widths=tuple(self.flow_widths))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["flow_widths"] = list(self.flow_widths)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "flow_widths" in data:
            data["flow_widths"] = tuple(int(v) for v in data["flow_widths"])
        try:
            return cls(**data)
        except TypeError as err:
            raise ConfigError(str(err)) from err


PROFILES: dict[str, TrainConfig] = {
    "paper": TrainConfig(),
    "desk": TrainConfig(lr_init=1e-3, lr_final=1e-5, batch_size=2, epochs=40, patch_size=64,
                        patch_stride=32, channels=16, reduction=4, flow_widths=(32, 32, 16, 8),
                        profile="desk"),
}


def get_profile(name: str) -> TrainConfig:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def load_config(path=None, profile: str | None = None, **overrides) -> TrainConfig:
    """Profile defaults, then file values, then explicit overrides (None values ignored)."""
    values: dict = {}
    if path is not None:
        try:
            values = tomli.loads(Path(path).read_text())
        except (OSError, tomli.TOMLDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
    profile = profile or values.pop("profile", None) or "paper"
    values.pop("profile", None)
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    base = get_profile(profile).to_dict()
    base.update(values)
    base.update({k: v for k, v in overrides.items() if v is not None})
    base["profile"] = profile
    return TrainConfig.from_dict(base)


def dump_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = f'"{value}"'
        else:
            text = repr(value)
        lines.append(f"{'lambda' if key == 'lam' else key} = {text}")
    return "\n".join(lines) + "\n"
