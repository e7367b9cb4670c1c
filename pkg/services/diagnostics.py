"""
Model-level gradient checks.
"""

import logging
from dataclasses import replace

import numpy as np

from models.restoration import DegradeSpec, LossWeights, ModelConfig
from services.datasynth import make_dataset
from services.loss import ConvFeatureStub, total_loss
from services.network import build
from services.numerics import GradcheckResult, gradcheck

logger = logging.getLogger(__name__)

CHECK_SIZE = 16


def model_gradcheck(config: ModelConfig, samples: int = 100, seed: int = 0, h: float = 1e-5,
                    size: int = CHECK_SIZE) -> GradcheckResult:
    """Backward vs central differences of the total loss on sampled parameters, in float64."""
    config = replace(config, precision=64)
    model = build(config)
    # a zero projection would make every upstream gradient exactly zero
    model.redraw_projection(np.random.default_rng(seed))
    ((clean, degraded),) = make_dataset(1, size, size, DegradeSpec(density=0.3), seed, dtype=config.dtype)
    weights = LossWeights(config.lambda_perceptual)
    fx = ConvFeatureStub(dtype=config.dtype)

    def objective():
        return total_loss(model(degraded), clean, weights, fx)

    named = model.named_parameters()
    for name, param in named:
        param.name = name
    result = gradcheck(objective, [p for _, p in named], samples=samples, h=h, seed=seed)
    logger.info(f"Model gradcheck: {result.checked} coordinates, max relative error "
                f"{result.max_relative_error:.3e} ({result.worst})")
    return result
