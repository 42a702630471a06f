"""Dataclass configs for the attention stack, the toy model, and training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError

#: Sentinel accepted by ``HemConfig.temperature``; resolves to sqrt(C) where C
#: is the channel count of the features entering the stack.
AUTO_SQRT_C = "auto"


class Kernel(str, Enum):
    RBF = "rbf"
    DOT = "dot"


class BasisNorm(str, Enum):
    NONE = "none"
    L2_ROWS = "l2_rows"


class GradMode(str, Enum):
    EXACT = "exact"
    SKIP_ONLY = "skip_only"


@dataclass(frozen=True)
class HemConfig:
    """Hyperparameters of the unrolled E/N stack.

    ``step_size`` is the N-step blend weight: 1.0 recovers plain EM, smaller
    values strengthen the skip path. ``temperature`` is the softmax scale
    (the isotropic Gaussian variance); the default resolves to sqrt(C) to
    keep the softmax out of saturation.
    """

    num_layers_train: int = 3
    num_layers_eval: int = 3
    step_size: float = 0.5
    temperature: float | str = AUTO_SQRT_C
    kernel: Kernel = Kernel.RBF
    momentum: float = 0.9
    normalize_bases: BasisNorm = BasisNorm.L2_ROWS

    def __post_init__(self):
        if self.num_layers_train < 1 or self.num_layers_eval < 1:
            raise ConfigError("layer counts must be >= 1")
        if not (0.0 < self.step_size <= 1.0):
            raise ConfigError(f"step_size must be in (0, 1], got {self.step_size}")
        if isinstance(self.temperature, str):
            if self.temperature != AUTO_SQRT_C:
                raise ConfigError(f"unknown temperature policy {self.temperature!r}")
        elif not (self.temperature > 0.0 and math.isfinite(self.temperature)):
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        # Coerce plain strings from config files into the enums.
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        object.__setattr__(self, "normalize_bases", BasisNorm(self.normalize_bases))

    def resolve_temperature(self, num_channels: int) -> float:
        if isinstance(self.temperature, str):
            return math.sqrt(num_channels)
        return float(self.temperature)


@dataclass(frozen=True)
class ModelConfig:
    """Shapes of the toy model: affine backbone, K bases, linear head."""

    input_dim: int
    feature_dim: int
    num_bases: int
    num_classes: int
    hidden_dim: int = 0  # 0 = single affine backbone, >0 adds one tanh layer
    bypass_stack: bool = False  # baseline: head reads backbone features directly

    def __post_init__(self):
        for name in ("input_dim", "feature_dim", "num_bases", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hidden_dim < 0:
            raise ConfigError("hidden_dim must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int
    hem: HemConfig = field(default_factory=HemConfig)
    model: ModelConfig | None = None
    loss: str = "cross_entropy"
    grad_log_interval: int = 200  # probe-set gradient profile every this many steps
    probe_size: int = 100

    def __post_init__(self):
        if not (self.learning_rate > 0.0):
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss != "cross_entropy":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.grad_log_interval < 1:
            raise ConfigError("grad_log_interval must be >= 1")
        if self.probe_size < 1:
            raise ConfigError("probe_size must be >= 1")
