"""
Configuration settings for the FA-Mamba toolkit.
"""

import os
from typing import List
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Settings:
    """Process-wide settings loaded from environment variables."""

    # Application Configuration
    LOG_LEVEL: str = os.getenv('LOG_LEVEL', 'INFO')
    LOG_DIR: str = os.getenv('LOG_DIR', 'logs')
    THREADS: int = int(os.getenv('FAMAMBA_THREADS', '0'))  # 0 keeps the library default
    SEED: int = int(os.getenv('FAMAMBA_SEED', '7'))
    PRECISION: int = int(os.getenv('FAMAMBA_PRECISION', '32'))

    # File paths
    CHECKPOINT_DIR: str = os.getenv('CHECKPOINT_DIR', 'checkpoints')
    DATA_DIR: str = os.getenv('DATA_DIR', 'data')

    # Published architecture (ablation configuration)
    PUBLISHED_DEPTHS: List[int] = [6, 6, 4, 4]
    PUBLISHED_CHANNELS: int = 180
    LAMBDA_PERCEPTUAL: float = 0.01

    # Selective-SSM defaults
    D_STATE: int = 16
    EXPAND: int = 2
    CONV_WIDTH: int = 4

    # Published training protocol, and its desk-scale shrink (100x, same 2:1 ratio)
    LEARNING_RATE_INITIAL: float = 3e-4
    LEARNING_RATE_REDUCED: float = 1e-4
    TOY_STEPS_INITIAL: int = 1500
    TOY_STEPS_REDUCED: int = 500
    BATCH_SIZE: int = 2
    ADAM_BETA1: float = 0.9
    ADAM_BETA2: float = 0.999
    ADAM_EPS: float = 1e-8

    # Gradient checks
    GRADCHECK_STEP: float = 1e-5
    GRADCHECK_TOLERANCE: float = 1e-4

    @classmethod
    def validate(cls) -> List[str]:
        """Validate settings and return a list of problems."""
        problems = []

        if cls.PRECISION not in (32, 64):
            problems.append(f'FAMAMBA_PRECISION must be 32 or 64, got {cls.PRECISION}')
        if cls.THREADS < 0:
            problems.append(f'FAMAMBA_THREADS must be >= 0, got {cls.THREADS}')
        if cls.SEED < 0:
            problems.append(f'FAMAMBA_SEED must be >= 0, got {cls.SEED}')
        if cls.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
            problems.append(f'LOG_LEVEL must be DEBUG, INFO, WARNING or ERROR, got {cls.LOG_LEVEL}')

        return problems


# Global settings instance
settings = Settings()
