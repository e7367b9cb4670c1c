"""
Data models for the restoration network, degradations, losses and training.
"""

import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

from config.settings import settings
from models.frequency import ScanMode
from utils.errors import ConfigError
from utils.helpers import ValidationUtils


class GlobalBranch(Enum):
    """Global path of the dual-branch block."""
    MAMBA = "mamba"
    ATTENTION = "attention"


class DegradeKind(Enum):
    """Synthetic weather degradation kinds."""
    RAIN = "rain"
    SNOW = "snow"


def format_config_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass
class ModelConfig:
    """Architecture hyperparameters of one network.

    Defaults are the published ablation configuration; ``toy()`` gives the
    desk-scale variant used for training runs and tests.
    """
    depths: List[int] = field(default_factory=lambda: list(settings.PUBLISHED_DEPTHS))
    channels: int = settings.PUBLISHED_CHANNELS
    hfem_channels: int = 32
    d_state: int = 16
    expand: int = 2
    conv_width: int = 4
    cnn_reduction: int = 4
    lambda_perceptual: float = 0.01
    seed: int = 0
    precision: int = 32
    use_mamba: bool = True
    use_hfem: bool = True
    use_pgb: bool = True
    scan_mode: ScanMode = ScanMode.AFSM
    global_branch: GlobalBranch = GlobalBranch.MAMBA

    IMAGE_CHANNELS = 3

    @classmethod
    def toy(cls, **overrides) -> 'ModelConfig':
        values = dict(depths=[1, 1], channels=8, hfem_channels=8)
        values.update(overrides)
        return cls(**values)

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    @property
    def dt_rank(self) -> int:
        return math.ceil(self.channels / 16)

    @property
    def cnn_hidden(self) -> int:
        return max(1, self.channels // self.cnn_reduction)

    @property
    def required_multiple(self) -> int:
        """Image extents must be divisible by this (DWT, in-block DWT, U-Net pooling)."""
        return 8 if self.use_hfem else 4

    def validate(self) -> 'ModelConfig':
        problems = []
        if not self.depths or any(d < 1 for d in self.depths):
            problems.append(f"depths must be a non-empty list of positive counts, got {self.depths}")
        if self.channels < 4 or self.channels % 4 != 0:
            problems.append(f"channels must be a positive multiple of 4, got {self.channels}")
        if not (self.lambda_perceptual >= 0 and math.isfinite(self.lambda_perceptual)):
            problems.append(f"lambda_perceptual must be finite and >= 0, got {self.lambda_perceptual}")
        if self.precision not in (32, 64):
            problems.append(f"precision must be 32 or 64, got {self.precision}")
        for name in ('hfem_channels', 'd_state', 'expand', 'conv_width', 'cnn_reduction'):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.seed < 0:
            problems.append(f"seed must be non-negative, got {self.seed}")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_text(self) -> str:
        """Canonical ``key = value`` rendering (sorted keys), stable byte-for-byte."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        return "".join(f"{key} = {format_config_value(values[key])}\n" for key in sorted(values))

    @classmethod
    def from_text(cls, text: str) -> 'ModelConfig':
        entries = ValidationUtils.parse_key_values(text, source="model config")
        parsers = cls.value_parsers()
        unknown = sorted(set(entries) - set(parsers))
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        values = {}
        for key, raw in entries.items():
            try:
                values[key] = parsers[key](raw)
            except (ValueError, KeyError) as e:
                raise ConfigError(f"bad value for '{key}': {raw}") from e
        return cls(**values).validate()

    @staticmethod
    def value_parsers() -> Dict[str, Callable[[str], object]]:
        return {
            'depths': ValidationUtils.parse_int_list,
            'channels': int,
            'hfem_channels': int,
            'd_state': int,
            'expand': int,
            'conv_width': int,
            'cnn_reduction': int,
            'lambda_perceptual': float,
            'seed': int,
            'precision': int,
            'use_mamba': ValidationUtils.parse_bool,
            'use_hfem': ValidationUtils.parse_bool,
            'use_pgb': ValidationUtils.parse_bool,
            'scan_mode': ScanMode,
            'global_branch': GlobalBranch,
        }


@dataclass
class DegradeSpec:
    """Parameters of one synthetic weather degradation."""
    kind: DegradeKind = DegradeKind.RAIN
    density: float = 0.3
    angle: float = 15.0            # degrees from vertical, rain only
    particle_radius: float = 1.5   # pixels, snow only
    intensity: float = 0.8
    seed: int = 0

    def validate(self) -> 'DegradeSpec':
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError(f"density must be in [0, 1], got {self.density}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ConfigError(f"intensity must be in [0, 1], got {self.intensity}")
        if self.particle_radius <= 0:
            raise ConfigError(f"particle_radius must be positive, got {self.particle_radius}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        return self

    def describe(self) -> str:
        return (f"kind={self.kind.value} density={self.density} angle={self.angle} "
                f"particle_radius={self.particle_radius} intensity={self.intensity} seed={self.seed}")


@dataclass
class LossWeights:
    """Weights of the composite objective."""
    lambda_perceptual: float = 0.01

    def __post_init__(self):
        if not (math.isfinite(self.lambda_perceptual) and self.lambda_perceptual >= 0):
            raise ConfigError(f"lambda_perceptual must be finite and >= 0, got {self.lambda_perceptual}")


@dataclass
class TrainConfig:
    """Optimization schedule: ``lr1`` for ``steps1`` steps, then ``lr2`` for ``steps2``."""
    steps1: int = 1500
    lr1: float = 3e-4
    steps2: int = 500
    lr2: float = 1e-4
    batch_size: int = 2
    crop_size: int = 32        # 0 trains on full images
    log_every: int = 50
    grad_clip: float = 0.0     # 0 disables clipping
    prefetch: int = 4          # bounded queue size; 0 generates batches inline
    seed: int = 7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def total_steps(self) -> int:
        return self.steps1 + self.steps2

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based step ``step``."""
        return self.lr1 if step <= self.steps1 else self.lr2

    def validate(self) -> 'TrainConfig':
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps1 < 0 or self.steps2 < 0 or self.total_steps < 1:
            raise ConfigError(f"need at least one training step, got {self.steps1}+{self.steps2}")
        if self.lr1 < 0 or self.lr2 < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.crop_size < 0 or self.log_every < 1 or self.grad_clip < 0 or self.prefetch < 0:
            raise ConfigError("crop_size, grad_clip and prefetch must be >= 0 and log_every >= 1")
        return self


@dataclass
class OptimState:
    """Adam moment accumulators, aligned with the model's parameter order."""
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: List[np.ndarray]) -> 'OptimState':
        return cls(
            first_moment=[np.zeros_like(a) for a in arrays],
            second_moment=[np.zeros_like(a) for a in arrays],
        )


@dataclass
class EvaluationReport:
    """Per-pair fidelity table plus its means.

    PSNR of identical images is ``inf``; reports print it as ``inf``.
    """
    table: pd.DataFrame

    @property
    def mean_psnr(self) -> float:
        return float(self.table['psnr'].mean())

    @property
    def mean_ssim(self) -> float:
        return float(self.table['ssim'].mean())

    @property
    def mean_input_psnr(self) -> float:
        return float(self.table['input_psnr'].mean())

    @property
    def mean_input_ssim(self) -> float:
        return float(self.table['input_ssim'].mean())

    @property
    def gain_db(self) -> float:
        """Mean PSNR improvement over the input; 0 when both means are infinite."""
        restored, degraded = self.mean_psnr, self.mean_input_psnr
        if math.isinf(restored) and math.isinf(degraded):
            return 0.0
        return restored - degraded


@dataclass
class PairRecord:
    """One manifest line: a clean/degraded image pair on disk."""
    index: int
    clean_path: str
    degraded_path: str
    spec: DegradeSpec

    def to_line(self) -> str:
        return f"{self.index}\t{self.clean_path}\t{self.degraded_path}\t{self.spec.describe()}"
