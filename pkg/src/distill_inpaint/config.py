"""Run configuration and the plain-text ``key = value`` config format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Optional

from .distillation import LossWeights
from .networks import NetworkConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    data: Optional[str] = None
    eval_data: Optional[str] = None
    image_size: int = 32
    # the reference setting is 6; 4 keeps desk-scale runs short
    batch_size: int = 4
    lr: float = 1e-4
    # "constant" or "cosine" (decay to zero over the student iterations)
    lr_schedule: str = "constant"
    iterations: int = 3000
    seed: int = 0
    levels: int = 3
    base_channels: int = 16
    kernel_size: int = 3
    w_rec_hole: float = 6.0
    w_rec_valid: float = 1.0
    w_cross: float = 1.0
    w_self: float = 1.0
    use_cross: bool = True
    use_self: bool = True
    use_filler: bool = True
    # copy the teacher's encoder/decoder weights into the student before training
    warm_start: bool = False
    teacher_iterations: int = 2000
    teacher_lr: float = 1e-4
    mask_pool: int = 1000
    fill: float = 0.0
    checkpoint_every: int = 500
    eval_seed: int = 1234

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("seed", "eval_seed", "fill") or isinstance(v, (bool, str)) or v is None:
                continue
            if f.name.startswith("w_"):
                if v < 0:
                    raise ConfigError(f"{f.name} must be non-negative, got {v}")
            elif v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")

    @property
    def network(self) -> NetworkConfig:
        return NetworkConfig(self.levels, self.base_channels, self.image_size, self.kernel_size, self.use_filler)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_rec_hole, self.w_rec_valid,
                           self.w_cross if self.use_cross else 0.0,
                           self.w_self if self.use_self else 0.0)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind: str, raw: str):
    if kind == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: expected {kind}, got {raw!r}") from None
    return raw


def parse_config(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    kinds = {f.name: str(f.type).replace("Optional[str]", "str") for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, kinds[key], raw)
    return dataclasses.replace(base or TrainConfig(), **values)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is not None:
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
