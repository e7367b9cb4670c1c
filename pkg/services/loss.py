"""
Training objective and fidelity metrics.

total = smooth_l1(O, G) + lambda * mse(fx(O), fx(G)), with elementwise
mean reduction throughout.
"""

import logging
import math
import os
from typing import List, Optional, Protocol, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from models.restoration import LossWeights
from services import numerics as nx
from services.layers import Conv2d
from services.numerics import Tensor
from utils.errors import ConfigError, DimensionError, ImageIOError

logger = logging.getLogger(__name__)

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5   # radius 5, an 11x11 window at sigma 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

ArrayLike = Union[np.ndarray, Tensor]


class FeatureExtractor(Protocol):
    """Pure map Tensor[N, 3, H, W] -> Tensor[N, F, H', W']; F, H', W' depend only on the input shape."""

    def __call__(self, image: Tensor) -> Tensor:
        ...


def smooth_l1(output: Tensor, target: Tensor) -> Tensor:
    """Mean of 0.5 E^2 where |E| < 1, else |E| - 0.5, with E = O - G."""
    if output.shape != target.shape:
        raise DimensionError(f"smooth_l1 shapes differ: {list(output.shape)} vs {list(target.shape)}")
    error = output.data - target.data
    magnitude = np.abs(error)
    quadratic = magnitude < 1
    value = np.where(quadratic, 0.5 * error * error, magnitude - 0.5).mean()
    slope = np.where(quadratic, error, np.sign(error)) / error.size

    def backward(g):
        return g * slope, -g * slope

    return nx.record('smooth_l1', np.asarray(value, dtype=output.dtype), (output, target), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    diff = nx.sub(a, b)
    return nx.mean(nx.mul(diff, diff))


def perceptual_loss(output: Tensor, target: Tensor, fx: FeatureExtractor) -> Tensor:
    return mse(fx(output), fx(target))


def total_loss(output: Tensor, target: Tensor, weights: LossWeights,
               fx: Optional[FeatureExtractor] = None) -> Tensor:
    loss = smooth_l1(output, target)
    if weights.lambda_perceptual > 0:
        if fx is None:
            raise ConfigError("a feature extractor is required when lambda_perceptual > 0")
        loss = nx.add(loss, nx.scale(perceptual_loss(output, target, fx), weights.lambda_perceptual))
    return loss


class IdentityFeatures:
    """Features are the image itself."""

    def __call__(self, image: Tensor) -> Tensor:
        return image


class ConvFeatureStub:
    """Fixed random conv stack standing in for pretrained features.

    3 -> 8 -> 16 (stride 2) -> 16 channels, 3x3 kernels, relu between
    layers. Weights come from a fixed seed and take no gradient.
    """

    SEED = 20240613

    def __init__(self, dtype=np.float32, seed: int = SEED):
        rng = np.random.default_rng(seed)
        self.layers = [
            Conv2d(3, 8, 3, rng, dtype=dtype),
            Conv2d(8, 16, 3, rng, stride=2, dtype=dtype),
            Conv2d(16, 16, 3, rng, dtype=dtype),
        ]
        for layer in self.layers:
            for param in layer.parameters():
                param.requires_grad = False

    def __call__(self, image: Tensor) -> Tensor:
        x = image
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = nx.relu(x)
        return x


class NpzFeatureExtractor:
    """Conv stack loaded from an ``.npz`` archive.

    Expected keys, for i = 0, 1, ...: ``conv{i}_weight`` [Cout, Cin, k, k]
    (odd k, cross-correlation), optional ``conv{i}_bias`` [Cout] and
    ``conv{i}_stride`` (scalar, default 1). Input is RGB in [0, 1] as
    [N, 3, H, W]; weights expecting normalized input must fold the
    normalization into the first layer. Relu follows every layer but the last.
    """

    def __init__(self, layers: List[Tuple[np.ndarray, Optional[np.ndarray], int]], dtype=np.float32):
        if not layers:
            raise ImageIOError("feature extractor has no layers")
        self.layers = [
            (Tensor(w.astype(dtype)), None if b is None else Tensor(b.astype(dtype)), stride)
            for w, b, stride in layers
        ]

    @classmethod
    def from_npz(cls, path: str, dtype=np.float32) -> 'NpzFeatureExtractor':
        if not os.path.isfile(path):
            raise ImageIOError(f"feature weights not found: {path}")
        layers = []
        with np.load(path) as archive:
            i = 0
            while f"conv{i}_weight" in archive:
                weight = archive[f"conv{i}_weight"]
                bias = archive[f"conv{i}_bias"] if f"conv{i}_bias" in archive else None
                stride = int(archive[f"conv{i}_stride"]) if f"conv{i}_stride" in archive else 1
                layers.append((weight, bias, stride))
                i += 1
        logger.info(f"Loaded {len(layers)} feature layers from {path}")
        return cls(layers, dtype=dtype)

    def __call__(self, image: Tensor) -> Tensor:
        x = image
        for i, (weight, bias, stride) in enumerate(self.layers):
            x = nx.conv2d(x, weight, bias, stride=stride, padding=weight.shape[2] // 2)
            if i < len(self.layers) - 1:
                x = nx.relu(x)
        return x


def _array(x: ArrayLike) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def psnr(output: ArrayLike, target: ArrayLike, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical inputs give ``math.inf``."""
    a, b = _array(output), _array(target)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes differ: {list(a.shape)} vs {list(b.shape)}")
    error = float(np.mean((a - b) ** 2))
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / error)


def ssim(output: ArrayLike, target: ArrayLike, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM averaged over the map; the last two axes are spatial."""
    a, b = _array(output), _array(target)
    if a.shape != b.shape or a.ndim < 2:
        raise DimensionError(f"ssim needs equal shapes of rank >= 2, got {list(a.shape)} and {list(b.shape)}")
    sigma = (0,) * (a.ndim - 2) + (SSIM_SIGMA, SSIM_SIGMA)

    def blur(x):
        return gaussian_filter(x, sigma=sigma, truncate=SSIM_TRUNCATE)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    index = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(index.mean())


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"
