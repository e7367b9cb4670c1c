"""
Run configuration: a ``key = value`` file plus command-line overrides.
"""

import logging
import os
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

from config.settings import settings
from models.frequency import ScanMode
from models.restoration import DegradeKind, DegradeSpec, GlobalBranch, ModelConfig, TrainConfig, format_config_value
from utils.errors import ConfigError, ImageIOError
from utils.helpers import ValidationUtils

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Every key a run file may set.

    Model keys mirror ModelConfig (toy-scale defaults), data keys describe
    the synthetic dataset used when no manifest is given, training keys
    mirror TrainConfig.
    """
    # model
    depths: List[int] = field(default_factory=lambda: [1, 1])
    channels: int = 8
    hfem_channels: int = 8
    d_state: int = settings.D_STATE
    expand: int = settings.EXPAND
    conv_width: int = settings.CONV_WIDTH
    cnn_reduction: int = 4
    lambda_perceptual: float = settings.LAMBDA_PERCEPTUAL
    seed: int = settings.SEED
    precision: int = settings.PRECISION
    use_mamba: bool = True
    use_hfem: bool = True
    use_pgb: bool = True
    scan_mode: ScanMode = ScanMode.AFSM
    global_branch: GlobalBranch = GlobalBranch.MAMBA

    # data
    manifest: str = ""
    pairs: int = 16
    height: int = 32
    width: int = 32
    kind: DegradeKind = DegradeKind.RAIN
    density: float = 0.3
    angle: float = 15.0
    particle_radius: float = 1.5
    intensity: float = 0.8
    holdout: int = 4

    # training
    steps1: int = settings.TOY_STEPS_INITIAL
    lr1: float = settings.LEARNING_RATE_INITIAL
    steps2: int = settings.TOY_STEPS_REDUCED
    lr2: float = settings.LEARNING_RATE_REDUCED
    batch_size: int = settings.BATCH_SIZE
    crop_size: int = 32
    log_every: int = 50
    grad_clip: float = 0.0
    prefetch: int = 4

    threads: int = settings.THREADS

    @staticmethod
    def value_parsers() -> Dict[str, Callable[[str], object]]:
        parsers = dict(ModelConfig.value_parsers())
        parsers.update({
            'manifest': str,
            'pairs': int,
            'height': int,
            'width': int,
            'kind': DegradeKind,
            'density': float,
            'angle': float,
            'particle_radius': float,
            'intensity': float,
            'holdout': int,
            'steps1': int,
            'lr1': float,
            'steps2': int,
            'lr2': float,
            'batch_size': int,
            'crop_size': int,
            'log_every': int,
            'grad_clip': float,
            'prefetch': int,
            'threads': int,
        })
        return parsers

    def _set(self, key: str, raw: str, source: str) -> None:
        parsers = self.value_parsers()
        if key not in parsers:
            raise ConfigError(f"{source}: unknown key '{key}'")
        try:
            setattr(self, key, parsers[key](raw))
        except (ValueError, KeyError) as e:
            raise ConfigError(f"{source}: bad value for '{key}': {raw}") from e

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> 'RunConfig':
        config = cls()
        for key, raw in ValidationUtils.parse_key_values(text, source).items():
            config._set(key, raw, source)
        return config

    @classmethod
    def from_file(cls, path: Optional[str]) -> 'RunConfig':
        """Defaults when ``path`` is None."""
        if path is None:
            return cls()
        if not os.path.isfile(path):
            raise ImageIOError(f"config file not found: {path}")
        try:
            with open(path, encoding='utf-8') as f:
                text = f.read()
        except (OSError, UnicodeDecodeError) as e:
            raise ImageIOError(f"cannot read config file {path}: {e}") from e
        config = cls.from_text(text, source=path)
        if config.manifest and not os.path.isabs(config.manifest):
            config.manifest = os.path.join(os.path.dirname(os.path.abspath(path)), config.manifest)
        return config

    def apply_overrides(self, overrides: Sequence[str]) -> 'RunConfig':
        """Apply ``key=value`` flag overrides after the file."""
        for item in overrides:
            if '=' not in item:
                raise ConfigError(f"override must look like key=value, got '{item}'")
            key, raw = (part.strip() for part in item.split('=', 1))
            self._set(key, raw, "--set")
        return self

    def to_text(self) -> str:
        """Effective configuration, sorted keys."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        return "".join(f"{key} = {format_config_value(values[key])}\n" for key in sorted(values))

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{name: getattr(self, name) for name in names}).validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps1=self.steps1, lr1=self.lr1, steps2=self.steps2, lr2=self.lr2,
            batch_size=self.batch_size, crop_size=self.crop_size, log_every=self.log_every,
            grad_clip=self.grad_clip, prefetch=self.prefetch, seed=self.seed,
            beta1=settings.ADAM_BETA1, beta2=settings.ADAM_BETA2, eps=settings.ADAM_EPS,
        ).validate()

    def degrade_spec(self) -> DegradeSpec:
        return DegradeSpec(kind=self.kind, density=self.density, angle=self.angle,
                           particle_radius=self.particle_radius, intensity=self.intensity,
                           seed=self.seed).validate()
