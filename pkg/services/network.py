"""
The full restoration network: DWT, shallow conv, shared HFEM prior,
stages of FA-Blocks with stage skips, projection, IWT.
"""

import logging
from typing import List

import numpy as np

from models.restoration import ModelConfig
from services import numerics as nx
from services.blocks import FABlock, HFEM, PRIOR_CHANNELS
from services.layers import Conv2d, Module, uniform_init
from services.numerics import Tensor
from services.wavelet import dwt2, high_bands, iwt2, split_bands, stack_bands
from utils.errors import DimensionError
from utils.helpers import ValidationUtils

logger = logging.getLogger(__name__)


class FAMambaNet(Module):
    """Image [N, 3, H, W] in [0, 1] to restored image of the same shape.

    All feature processing runs at half resolution on the stacked
    wavelet bands. The prior is computed once per forward pass from the
    input's high bands and handed to every block. A global residual adds
    the input bands back before the inverse transform. The projection
    starts at zero, so a freshly built model restores its input unchanged.
    """

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        self.trained_steps = 0
        rng = np.random.default_rng(config.seed)
        dtype = config.dtype
        bands = 4 * ModelConfig.IMAGE_CHANNELS
        c = config.channels

        self.shallow = Conv2d(bands, c, 3, rng, dtype=dtype)
        self.hfem = HFEM(PRIOR_CHANNELS, config.hfem_channels, rng, dtype=dtype) if config.use_hfem else None
        self.stages: List[List[FABlock]] = [
            [FABlock(c, config, rng, dtype=dtype) for _ in range(depth)] for depth in config.depths
        ]
        self.projection = Conv2d(c, bands, 3, rng, dtype=dtype)
        self.projection.zero_parameters()

    def redraw_projection(self, rng: np.random.Generator) -> None:
        """Fan-in uniform weights for the projection, as every other conv starts."""
        fan_in = self.projection.in_channels * self.projection.kernel_size ** 2
        for param in self.projection.parameters():
            param.assign(uniform_init(rng, param.shape, fan_in, param.dtype))

    def prior(self, bands) -> Tensor:
        raw = high_bands(bands)
        return self.hfem(raw) if self.hfem is not None else raw

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[1] != ModelConfig.IMAGE_CHANNELS:
            raise DimensionError(f"expected image [N, 3, H, W], got {list(image.shape)}")
        ValidationUtils.check_spatial(image.shape, self.config.required_multiple, what="image")

        bands = dwt2(image)
        stacked = stack_bands(bands)
        prior = self.prior(bands)

        features = self.shallow(stacked)
        for stage in self.stages:
            stage_input = features
            for block in stage:
                features = block(features, prior)
            features = nx.add(features, stage_input)

        restored = nx.add(stacked, self.projection(features))
        return iwt2(split_bands(restored))

    def restore(self, image: Tensor) -> Tensor:
        """Inference: no tape, output clipped to [0, 1]."""
        with nx.no_grad():
            return nx.clamp(self.forward(image), 0.0, 1.0)

    def flops(self, h: int, w: int) -> int:
        bh, bw = h // 2, w // 2
        total = self.shallow.flops(bh, bw) + self.projection.flops(bh, bw)
        if self.hfem is not None:
            total += self.hfem.flops(bh, bw)
        for stage in self.stages:
            total += sum(block.flops(bh, bw) for block in stage)
        return total


def build(config: ModelConfig) -> FAMambaNet:
    """Deterministic construction: identical configs give bit-identical parameters."""
    model = FAMambaNet(config)
    logger.info(f"Built model depths={config.depths} channels={config.channels} "
                f"params={model.param_count():,}")
    return model


def param_count(model: Module) -> int:
    return model.param_count()


def flop_estimate(model: Module, h: int, w: int) -> int:
    """Approximate FLOPs of one forward pass (multiply-accumulates counted twice)."""
    return int(model.flops(h, w))
