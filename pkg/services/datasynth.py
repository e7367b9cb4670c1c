"""
Procedural clean/degraded image pairs.

Clean images mix smooth gradients, hard-edged rectangles and sinusoidal
texture. Degradations screen-blend a bright layer of rain streaks or
snow discs over the image. Every random draw comes from the seed, and
the candidate particles are drawn independently of the density, so a
denser DegradeSpec always adds to a sparser one.
"""

import logging
import math
import os
from dataclasses import replace
from typing import List, Tuple

import numpy as np
from scipy.ndimage import convolve

from models.restoration import DegradeKind, DegradeSpec, PairRecord
from services.numerics import Tensor
from utils.errors import DimensionError, ImageIOError
from utils.helpers import FileUtils, ImageIO

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
RAIN_PIXELS_PER_STREAK = 32     # candidate count at density 1 is h*w / this
SNOW_PIXELS_PER_PARTICLE = 24

Pair = Tuple[Tensor, Tensor]


def particle_count(density: float, candidates: int) -> int:
    """Leading candidates drawn at ``density``; any positive density draws at least one."""
    if density <= 0:
        return 0
    return min(candidates, max(1, math.ceil(density * candidates - 1e-9)))


def generate_clean(seed: int, h: int, w: int, dtype=np.float32) -> Tensor:
    """Deterministic [1, 3, h, w] image in [0, 1] with smooth regions and sharp edges."""
    if h < 1 or w < 1:
        raise DimensionError(f"image extents must be positive, got {h}x{w}")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing='ij')

    start, end = rng.uniform(0.15, 0.85, size=(2, 3))
    direction = rng.uniform(-1.0, 1.0, size=2)
    ramp = (direction[0] * yy + direction[1] * xx)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    image = start[:, None, None] + (end - start)[:, None, None] * ramp[None]

    for _ in range(rng.integers(3, 6)):
        top, left = rng.integers(0, h), rng.integers(0, w)
        height, width = rng.integers(max(1, h // 8), max(2, h // 2)), rng.integers(max(1, w // 8), max(2, w // 2))
        image[:, top:top + height, left:left + width] = rng.uniform(0.05, 0.9, size=3)[:, None, None]

    frequency = rng.uniform(2.0, 6.0, size=2)
    phase = rng.uniform(0.0, 2 * math.pi)
    texture = 0.08 * np.sin(2 * math.pi * (frequency[0] * yy + frequency[1] * xx) + phase)
    image = np.clip(image + texture[None], 0.0, 1.0)
    return Tensor(image[None].astype(dtype))


def _rain_layer(rng: np.random.Generator, h: int, w: int, spec: DegradeSpec) -> np.ndarray:
    candidates = max(1, (h * w) // RAIN_PIXELS_PER_STREAK)
    origins = rng.uniform(0.0, 1.0, size=(candidates, 2)) * [h, w]
    brightness = rng.uniform(0.6, 1.0, size=candidates)
    count = particle_count(spec.density, candidates)

    theta = math.radians(spec.angle)
    step = np.array([math.cos(theta), math.sin(theta)])
    length = max(2, h // 4)
    t = np.arange(length)[:, None]

    layer = np.zeros((h, w))
    for origin, value in zip(origins[:count], brightness[:count]):
        points = np.rint(origin + t * step).astype(int)
        inside = (points[:, 0] >= 0) & (points[:, 0] < h) & (points[:, 1] >= 0) & (points[:, 1] < w)
        np.add.at(layer, (points[inside, 0], points[inside, 1]), value)

    # 3-tap box blur along the streak direction
    kernel = np.zeros((3, 3))
    dy, dx = int(round(step[0])), int(round(step[1]))
    for offset in (-1, 0, 1):
        kernel[1 + offset * dy, 1 + offset * dx] += 1.0 / 3
    return convolve(layer, kernel, mode='constant')


def _snow_layer(rng: np.random.Generator, h: int, w: int, spec: DegradeSpec) -> np.ndarray:
    candidates = max(1, (h * w) // SNOW_PIXELS_PER_PARTICLE)
    centers = rng.uniform(0.0, 1.0, size=(candidates, 2)) * [h, w]
    radii = spec.particle_radius * rng.uniform(0.6, 1.4, size=candidates)
    brightness = rng.uniform(0.6, 1.0, size=candidates)
    count = particle_count(spec.density, candidates)

    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    layer = np.zeros((h, w))
    for (cy, cx), radius, value in zip(centers[:count], radii[:count], brightness[:count]):
        layer += value * (((yy - cy) ** 2 + (xx - cx) ** 2) <= radius * radius)
    return layer


def degrade(image: Tensor, spec: DegradeSpec) -> Tensor:
    """Screen-blend rain or snow over ``image``; density 0 returns an exact copy."""
    spec.validate()
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim != 4 or data.shape[1] != 3:
        raise DimensionError(f"expected image [N, 3, H, W], got {list(data.shape)}")
    if spec.density == 0:
        return Tensor(data.copy())

    h, w = data.shape[2:]
    rng = np.random.default_rng(spec.seed)
    layer = _rain_layer(rng, h, w, spec) if spec.kind is DegradeKind.RAIN else _snow_layer(rng, h, w, spec)
    alpha = np.clip(layer * spec.intensity, 0.0, 1.0)
    blended = data + alpha * (1.0 - data)
    return Tensor(np.clip(blended, 0.0, 1.0).astype(data.dtype))


def pair_seeds(seed: int, index: int) -> Tuple[int, int]:
    """Clean-image and degradation seeds of pair ``index``."""
    clean_seed, degrade_seed = np.random.SeedSequence([seed, index]).generate_state(2)
    return int(clean_seed), int(degrade_seed)


def make_dataset(n: int, h: int, w: int, spec_template: DegradeSpec, seed: int,
                 dtype=np.float32) -> List[Pair]:
    """``n`` deterministic (clean, degraded) pairs."""
    return [pair for pair, _ in make_dataset_with_specs(n, h, w, spec_template, seed, dtype)]


def make_dataset_with_specs(n: int, h: int, w: int, spec_template: DegradeSpec, seed: int,
                            dtype=np.float32) -> List[Tuple[Pair, DegradeSpec]]:
    if n < 1:
        raise DimensionError(f"dataset size must be positive, got {n}")
    result = []
    for index in range(n):
        clean_seed, degrade_seed = pair_seeds(seed, index)
        spec = replace(spec_template, seed=degrade_seed)
        clean = generate_clean(clean_seed, h, w, dtype=dtype)
        result.append(((clean, degrade(clean, spec)), spec))
    return result


def write_dataset(n: int, h: int, w: int, spec_template: DegradeSpec, seed: int, out_dir: str) -> str:
    """Write pairs as PNG files plus a manifest; returns the manifest path."""
    records = []
    for index, ((clean, degraded), spec) in enumerate(make_dataset_with_specs(n, h, w, spec_template, seed)):
        clean_name, degraded_name = f"clean_{index:04d}.png", f"degraded_{index:04d}.png"
        ImageIO.save_png(clean.data, os.path.join(out_dir, clean_name))
        ImageIO.save_png(degraded.data, os.path.join(out_dir, degraded_name))
        records.append(PairRecord(index, clean_name, degraded_name, spec))

    manifest = os.path.join(out_dir, MANIFEST_NAME)
    FileUtils.ensure_directory_exists(manifest)
    with open(manifest, 'w', encoding='utf-8') as f:
        f.write("".join(record.to_line() + "\n" for record in records))
    logger.info(f"Wrote {n} pairs of {h}x{w} ({spec_template.kind.value}) to {out_dir}")
    return manifest


def _parse_spec(fields: str, where: str) -> DegradeSpec:
    try:
        values = dict(item.split('=', 1) for item in fields.split())
        return DegradeSpec(
            kind=DegradeKind(values['kind']),
            density=float(values['density']),
            angle=float(values['angle']),
            particle_radius=float(values['particle_radius']),
            intensity=float(values['intensity']),
            seed=int(values['seed']),
        )
    except (KeyError, ValueError) as e:
        raise ImageIOError(f"{where}: malformed degradation fields '{fields}'") from e


def read_manifest(path: str) -> List[PairRecord]:
    """Parse a manifest; image paths are resolved against its directory."""
    if not os.path.isfile(path):
        raise ImageIOError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip('\n')
            if not line.strip():
                continue
            parts = line.split('\t')
            if len(parts) != 4:
                raise ImageIOError(f"{path}:{number}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                index = int(parts[0])
            except ValueError as e:
                raise ImageIOError(f"{path}:{number}: bad pair index '{parts[0]}'") from e
            records.append(PairRecord(
                index=index,
                clean_path=os.path.join(base, parts[1]),
                degraded_path=os.path.join(base, parts[2]),
                spec=_parse_spec(parts[3], f"{path}:{number}"),
            ))
    if not records:
        raise ImageIOError(f"manifest is empty: {path}")
    return records


def load_pairs(records: List[PairRecord], dtype=np.float32) -> List[Pair]:
    return [(Tensor(ImageIO.load_png(r.clean_path, dtype)), Tensor(ImageIO.load_png(r.degraded_path, dtype)))
            for r in records]
