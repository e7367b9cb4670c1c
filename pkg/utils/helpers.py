"""
Helper utilities for the FA-Mamba toolkit.
"""

import logging
import os
from datetime import datetime
from typing import Dict, List, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from utils.errors import ConfigError, DimensionError, ImageIOError

logger = logging.getLogger(__name__)


class FileUtils:
    """Utility functions for file operations."""

    @staticmethod
    def ensure_directory_exists(file_path: str) -> None:
        """Ensure the directory for a file path exists."""
        directory = os.path.dirname(file_path)
        if directory and not os.path.exists(directory):
            os.makedirs(directory, exist_ok=True)

    @staticmethod
    def setup_logging(log_level: str = "INFO", log_dir: str = "logs") -> None:
        """Setup logging configuration."""
        os.makedirs(log_dir, exist_ok=True)

        log_file = os.path.join(log_dir, f"famamba_{datetime.now().strftime('%Y%m%d')}.log")

        logging.basicConfig(
            level=getattr(logging, log_level.upper()),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(log_file),
                logging.StreamHandler()
            ]
        )


class ImageIO:
    """8-bit RGB PNG reading and writing.

    Images map to float arrays of layout [1, 3, H, W] in [0, 1] by division
    by 255; writing quantizes with round-half-up.
    """

    @staticmethod
    def load_png(path: str, dtype=np.float32) -> np.ndarray:
        """Load an 8-bit RGB PNG as a [1, 3, H, W] array in [0, 1]."""
        if not os.path.isfile(path):
            raise ImageIOError(f"image not found: {path}")
        try:
            with Image.open(path) as img:
                if img.format != 'PNG':
                    raise ImageIOError(f"not a PNG file: {path}")
                if img.mode != 'RGB':
                    raise ImageIOError(f"expected 8-bit RGB, got mode {img.mode}: {path}")
                pixels = np.asarray(img, dtype=np.uint8)
        except (UnidentifiedImageError, OSError) as e:
            raise ImageIOError(f"cannot read image {path}: {e}") from e

        return (pixels.transpose(2, 0, 1)[None].astype(dtype) / dtype(255.0)).astype(dtype)

    @staticmethod
    def quantize(image: np.ndarray) -> np.ndarray:
        """Quantize a [1, 3, H, W] array in [0, 1] to HxWx3 uint8 (round half up)."""
        image = np.asarray(image)
        if image.ndim != 4 or image.shape[0] != 1 or image.shape[1] != 3:
            raise DimensionError(f"expected image of shape [1, 3, H, W], got {list(image.shape)}")
        scaled = np.floor(np.clip(image[0].astype(np.float64), 0.0, 1.0) * 255.0 + 0.5)
        return scaled.astype(np.uint8).transpose(1, 2, 0)

    @staticmethod
    def save_png(image: np.ndarray, path: str) -> None:
        """Write a [1, 3, H, W] array in [0, 1] as an 8-bit RGB PNG."""
        pixels = ImageIO.quantize(image)
        try:
            FileUtils.ensure_directory_exists(path)
            Image.fromarray(pixels, mode='RGB').save(path, format='PNG')
        except OSError as e:
            raise ImageIOError(f"cannot write image {path}: {e}") from e
        logger.debug(f"Wrote {pixels.shape[1]}x{pixels.shape[0]} image to {path}")

    @staticmethod
    def band_to_display(band: np.ndarray, high_frequency: bool, gain: float = 2.0) -> np.ndarray:
        """Map wavelet coefficients to a viewable [0, 1] image.

        High bands are shown as 0.5 + coef/2; the approximation band is
        divided by its gain so a unit-range image stays in range.
        """
        band = np.asarray(band, dtype=np.float64)
        if high_frequency:
            return np.clip(0.5 + band / 2.0, 0.0, 1.0)
        return np.clip(band / gain, 0.0, 1.0)


class ValidationUtils:
    """Utility functions for parsing and validating user input."""

    TRUE_WORDS = {'1', 'true', 'yes', 'on'}
    FALSE_WORDS = {'0', 'false', 'no', 'off'}

    @staticmethod
    def parse_int_list(text: str) -> List[int]:
        """Parse a comma-separated list of integers such as ``6,6,4,4``."""
        try:
            values = [int(part) for part in text.replace(' ', '').split(',') if part]
        except ValueError as e:
            raise ConfigError(f"expected comma-separated integers, got '{text}'") from e
        if not values:
            raise ConfigError("expected at least one integer")
        return values

    @staticmethod
    def parse_bool(text: str) -> bool:
        word = text.strip().lower()
        if word in ValidationUtils.TRUE_WORDS:
            return True
        if word in ValidationUtils.FALSE_WORDS:
            return False
        raise ConfigError(f"expected a boolean, got '{text}'")

    @staticmethod
    def parse_key_values(text: str, source: str = "<text>") -> Dict[str, str]:
        """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
        entries: Dict[str, str] = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{source}:{number}: expected 'key = value', got '{raw.strip()}'")
            key, value = (part.strip() for part in line.split('=', 1))
            if not key:
                raise ConfigError(f"{source}:{number}: empty key")
            if key in entries:
                raise ConfigError(f"{source}:{number}: duplicate key '{key}'")
            entries[key] = value
        return entries

    @staticmethod
    def is_divisible(extent: int, factor: int) -> bool:
        return extent > 0 and extent % factor == 0

    @staticmethod
    def check_spatial(shape: Tuple[int, ...], factor: int, what: str = "input") -> None:
        """Raise DimensionError unless the last two extents are divisible by factor."""
        if len(shape) != 4:
            raise DimensionError(f"{what}: expected a 4-D tensor [N, C, H, W], got shape {list(shape)}")
        height, width = shape[2], shape[3]
        if not (ValidationUtils.is_divisible(height, factor) and ValidationUtils.is_divisible(width, factor)):
            raise DimensionError(
                f"{what}: height and width must be divisible by {factor}, got {height}x{width}"
            )
