"""
Orthonormal Haar wavelet transform, single- and multi-level.

For each disjoint 2x2 block ``[[a, b], [c, d]]``:

    LL = (a + b + c + d) / 2      LH = (a - b + c - d) / 2
    HL = (a + b - c - d) / 2      HH = (a - b - c + d) / 2

LH is the horizontal high-pass (responds to vertical edges), HL the
vertical high-pass. The 4x4 filter matrix is symmetric and its own
inverse, so analysis and synthesis are each other's adjoint.
"""

import logging
from typing import List

import numpy as np

from models.frequency import SubBands
from services import numerics as nx
from services.numerics import Tensor
from utils.errors import DimensionError
from utils.helpers import ValidationUtils

logger = logging.getLogger(__name__)


def _analysis(data: np.ndarray) -> np.ndarray:
    """[N, C, H, W] -> [N, C, 4, H/2, W/2] in LL, LH, HL, HH order."""
    a = data[:, :, 0::2, 0::2]
    b = data[:, :, 0::2, 1::2]
    c = data[:, :, 1::2, 0::2]
    d = data[:, :, 1::2, 1::2]
    half = data.dtype.type(0.5)
    return np.stack([
        (a + b + c + d) * half,
        (a - b + c - d) * half,
        (a + b - c - d) * half,
        (a - b - c + d) * half,
    ], axis=2)


def _synthesis(coeffs: np.ndarray) -> np.ndarray:
    """[N, C, 4, h, w] -> [N, C, 2h, 2w]."""
    ll, lh, hl, hh = (coeffs[:, :, k] for k in range(4))
    n, c, h, w = ll.shape
    half = coeffs.dtype.type(0.5)
    out = np.empty((n, c, 2 * h, 2 * w), dtype=coeffs.dtype)
    out[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * half
    out[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * half
    out[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * half
    out[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * half
    return out


def haar_analysis(x: Tensor) -> Tensor:
    """Differentiable analysis step returning stacked coefficients [N, C, 4, H/2, W/2]."""
    ValidationUtils.check_spatial(x.shape, 2, what="dwt2")
    return nx.record('haar_analysis', _analysis(x.data), (x,), lambda g: (_synthesis(g),))


def haar_synthesis(coeffs: Tensor) -> Tensor:
    """Differentiable synthesis step from stacked coefficients [N, C, 4, h, w]."""
    if coeffs.ndim != 5 or coeffs.shape[2] != 4:
        raise DimensionError(f"haar_synthesis expects [N, C, 4, h, w], got {list(coeffs.shape)}")
    return nx.record('haar_synthesis', _synthesis(coeffs.data), (coeffs,), lambda g: (_analysis(g),))


def dwt2(image: Tensor, level: int = 1) -> SubBands:
    """One analysis level. Odd extents raise DimensionError (no padding)."""
    coeffs = haar_analysis(image)
    ll, lh, hl, hh = (coeffs[:, :, k] for k in range(4))
    return SubBands(ll=ll, lh=lh, hl=hl, hh=hh, level=level)


def iwt2(bands: SubBands) -> Tensor:
    """Exact inverse of ``dwt2``."""
    return haar_synthesis(nx.stack([bands.ll, bands.lh, bands.hl, bands.hh], axis=2))


def dwt_multi(image: Tensor, levels: int) -> List[SubBands]:
    """Recursive decomposition of the approximation band; entry k-1 holds level k."""
    if levels < 1:
        raise DimensionError(f"levels must be >= 1, got {levels}")
    ValidationUtils.check_spatial(image.shape, 2 ** levels, what=f"dwt_multi(levels={levels})")
    pyramid = []
    current = image
    for level in range(1, levels + 1):
        bands = dwt2(current, level=level)
        pyramid.append(bands)
        current = bands.ll
    return pyramid


def iwt_multi(pyramid: List[SubBands]) -> Tensor:
    """Inverse of ``dwt_multi``; only the deepest LL band is used."""
    if not pyramid:
        raise DimensionError("iwt_multi needs at least one level")
    current = iwt2(pyramid[-1])
    for bands in reversed(pyramid[:-1]):
        current = iwt2(SubBands(ll=current, lh=bands.lh, hl=bands.hl, hh=bands.hh, level=bands.level))
    return current


def stack_bands(bands: SubBands) -> Tensor:
    """Concatenate the four bands on the channel axis: [N, 4C, h, w]."""
    return nx.concat([bands.ll, bands.lh, bands.hl, bands.hh], axis=1)


def split_bands(stacked: Tensor, level: int = 1) -> SubBands:
    """Inverse of ``stack_bands``."""
    channels = stacked.shape[1]
    if channels % 4:
        raise DimensionError(f"cannot split {channels} channels into four bands")
    c = channels // 4
    return SubBands(ll=stacked[:, 0:c], lh=stacked[:, c:2 * c], hl=stacked[:, 2 * c:3 * c],
                    hh=stacked[:, 3 * c:], level=level)


def high_bands(bands: SubBands) -> Tensor:
    """LH, HL and HH concatenated on the channel axis: [N, 3C, h, w]."""
    return nx.concat([bands.lh, bands.hl, bands.hh], axis=1)


def energy(x: np.ndarray) -> float:
    return float(np.sum(np.asarray(x, dtype=np.float64) ** 2))
