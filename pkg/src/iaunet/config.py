"""Run configuration: nested dataclasses that round-trip through JSON.

Unknown keys are rejected at every nesting level so typos in a config file
fail loudly instead of silently falling back to defaults.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional


class ConfigError(ValueError):
    pass


UPDATE_ORDERS = ("sequential", "cyclic")
SUPERVISION_MODES = ("block", "layer", "none")


@dataclass
class ModelConfig:
    in_channels: int = 3
    stem_channels: int = 16
    encoder_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    hidden_dim: int = 64
    num_queries: int = 8
    num_classes: int = 1
    ffn_dim: int = 256
    num_heads: int = 1
    blocks_per_layer: int = 3
    use_se: bool = True
    se_reduction: int = 4
    use_coordconv: bool = True
    update_order: str = "sequential"
    deep_supervision: str = "block"
    mask_threshold: float = 0.5
    score_floor: float = 0.05

    def validate(self) -> None:
        if self.update_order not in UPDATE_ORDERS:
            raise ConfigError(f"update_order must be one of {UPDATE_ORDERS}, got {self.update_order!r}")
        if self.deep_supervision not in SUPERVISION_MODES:
            raise ConfigError(f"deep_supervision must be one of {SUPERVISION_MODES}, got {self.deep_supervision!r}")
        if self.use_se and self.hidden_dim % self.se_reduction:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by SE reduction {self.se_reduction}")
        if self.hidden_dim % 4:
            raise ConfigError("hidden_dim must be divisible by 4 for the 2-D sine embedding")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if len(self.encoder_channels) != 4:
            raise ConfigError("encoder_channels needs exactly four entries (strides 4, 8, 16, 32)")
        for name in ("num_queries", "num_classes", "ffn_dim", "blocks_per_layer", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class LossWeights:
    """The one record both the matcher and the loss read their coefficients from."""

    cls: float = 1.0
    dice: float = 2.0
    bce: float = 5.0
    no_object: float = 0.1
    dice_eps: float = 1.0


@dataclass
class OptimConfig:
    lr: float = 1e-3
    min_lr: float = 1e-6
    weight_decay: float = 0.05
    steps: int = 500
    batch_size: int = 4
    checkpoint_interval: int = 0


@dataclass
class DataConfig:
    root: Optional[str] = None
    count: int = 4
    image_size: int = 64
    augment: bool = False
    min_instances: int = 2
    max_instances: int = 4
    min_axis: float = 6.0
    max_axis: float = 12.0
    max_overlap: float = 0.15
    noise: float = 0.04
    background: float = 0.55
    multiclass: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 7
    out_dir: str = "runs/default"

    def validate(self) -> None:
        self.model.validate()
        if self.data.image_size % 32:
            raise ConfigError(f"data.image_size {self.data.image_size} must be divisible by 32")
        if self.data.multiclass and self.model.num_classes < 2:
            raise ConfigError("data.multiclass needs model.num_classes >= 2")
        if self.optim.steps < 0 or self.optim.batch_size < 1:
            raise ConfigError("optim.steps must be >= 0 and optim.batch_size >= 1")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        cfg = _build(cls, raw, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _build(kind, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(kind)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    defaults = kind()
    for name, value in raw.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}: expected true/false")
            kwargs[name] = value
        elif isinstance(current, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    return kind(**kwargs)
